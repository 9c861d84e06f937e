"""Experiment driver: config parsing, the (test domain, OOD class, seed) grid,
per-mode training, detector evaluation and CSV output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import DomainDataset, Pool, SyntheticSpec, build_colored_mnist, gen_synthetic, split_id_ood
from .detectors import KINDS, Detector
from .dual import DualConfig, DualState, train_dual
from .meta import MetaConfig, all_class_adapt, format_log_line, train_meta
from .metrics import accuracy, aupr_out, auroc
from .model import Predictor, cross_entropy, logits, predict

MODES = ("meta", "dual", "ce_only", "meta_no_gi", "meta_no_ood")
META_MODES = ("meta", "meta_no_gi", "meta_no_ood")
DATA_DIR_ENV = "MADOD_DATA_DIR"
MNIST_FILES = {
    "images": ["train-images-idx3-ubyte", "t10k-images-idx3-ubyte"],
    "labels": ["train-labels-idx1-ubyte", "t10k-labels-idx1-ubyte"],
}


class ConfigError(ValueError):
    pass


class CellError(RuntimeError):
    """Wraps a failure inside one grid cell with its coordinates."""


def stream(seed: int, name: str, *cell: int) -> np.random.Generator:
    """Named substream of a master seed; ``cell`` mixes in grid coordinates."""
    return np.random.default_rng([seed, zlib.crc32(name.encode()), *cell])


def _substream_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(2**31 - 1))


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic"})
    modes: list[str] = field(default_factory=lambda: ["meta"])
    detectors: list[str] = field(default_factory=lambda: list(KINDS))
    test_domains: list[int] = field(default_factory=lambda: [0])
    ood_classes: list[int] = field(default_factory=lambda: [0])
    seeds: list[int] = field(default_factory=lambda: [0])
    hidden: list[int] = field(default_factory=lambda: [32, 16])
    train_steps: int = 100
    adapt_steps: int = 50
    ce_lr: float = 1e-3
    ce_batch_size: int = 32
    meta: MetaConfig = field(default_factory=MetaConfig)
    dual: DualConfig = field(default_factory=DualConfig)
    protocol_full: bool = False
    out_dir: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        raw = dict(raw)
        known = {f.name for f in fields(cls)} | {"mode", "name"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        raw.pop("name", None)
        if "mode" in raw:
            if "modes" in raw:
                raise ConfigError("give either 'mode' or 'modes', not both")
            mode = raw.pop("mode")
            raw["modes"] = [mode] if isinstance(mode, str) else list(mode)
        try:
            if "meta" in raw:
                raw["meta"] = MetaConfig(**raw["meta"])
            if "dual" in raw:
                dual = dict(raw["dual"])
                dual["state"] = DualState(**dual.get("state", {}))
                raw["dual"] = DualConfig(**dual)
            cfg = cls(**raw)
        except TypeError as err:
            raise ConfigError(str(err)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self, n_classes: int | None = None, domains: list[int] | None = None) -> None:
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ConfigError(f"modes must be a non-empty subset of {MODES}, got {self.modes}")
        bad = [d for d in self.detectors if d not in KINDS]
        if bad or not self.detectors:
            raise ConfigError(f"detectors must be a non-empty subset of {KINDS}, got {self.detectors}")
        if self.dataset.get("kind") not in ("synthetic", "colored_mnist"):
            raise ConfigError(f"dataset kind must be synthetic or colored_mnist, got {self.dataset.get('kind')!r}")
        for name in ("test_domains", "ood_classes", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")
        if self.train_steps < 0 or self.adapt_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if n_classes is not None:
            missing = [c for c in self.ood_classes if not 0 <= c < n_classes]
            if missing:
                raise ConfigError(f"OOD classes {missing} not in a {n_classes}-class dataset")
            need = math.ceil(round(0.4 * n_classes, 9))
            if self.protocol_full and len(set(self.ood_classes)) < need:
                raise ConfigError(f"full protocol needs at least {need} OOD classes, got {len(set(self.ood_classes))}")
        if domains is not None:
            missing = [d for d in self.test_domains if d not in domains]
            if missing:
                raise ConfigError(f"test domains {missing} not in dataset domains {domains}")


@dataclass
class EvalRecord:
    dataset: str
    test_domain: int
    ood_class: int
    seed: int
    mode: str
    detector: str
    auroc: float
    aupr: float
    id_accuracy: float
    wall_time_seconds: float = 0.0

    def __post_init__(self):
        for name in ("auroc", "aupr", "id_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def sort_key(self) -> tuple:
        return (self.dataset, self.mode, self.test_domain, self.ood_class, self.seed, self.detector)


# wall time is not deterministic, so it lives in timings.csv
RESULT_COLUMNS = [f.name for f in fields(EvalRecord) if f.name != "wall_time_seconds"]
TIMING_COLUMNS = ["dataset", "mode", "test_domain", "ood_class", "seed", "wall_time_seconds"]
SUMMARY_COLUMNS = [
    "dataset", "mode", "detector", "test_domain", "n", "single",
    "auroc_mean", "auroc_se", "aupr_mean", "aupr_se", "id_accuracy_mean", "id_accuracy_se",
]


# ------------------------------------------------------------------- datasets


def mnist_paths(spec: dict) -> tuple[list[str], list[str]]:
    if "images" in spec and "labels" in spec:
        return list(spec["images"]), list(spec["labels"])
    root = spec.get("root") or os.environ.get(DATA_DIR_ENV)
    if not root:
        raise ConfigError(f"colored_mnist needs 'images'/'labels', 'root' or ${DATA_DIR_ENV}")
    pick = lambda name: str(Path(root) / name) if (Path(root) / name).exists() else str(Path(root) / (name + ".gz"))
    return [pick(n) for n in MNIST_FILES["images"]], [pick(n) for n in MNIST_FILES["labels"]]


def build_dataset(spec: dict, seed: int) -> DomainDataset:
    """Dataset for one master seed; the data substream fixes its randomness."""
    data_seed = _substream_seed(seed, "data")
    if spec["kind"] == "synthetic":
        params = {k: v for k, v in spec.items() if k != "kind"}
        return gen_synthetic(SyntheticSpec(**params), data_seed)
    images, labels = mnist_paths(spec)
    return build_colored_mnist(images, labels, data_seed, factor=spec.get("factor", 2))


# ------------------------------------------------------------------- training


def train_ce(p: Predictor, pool: Pool, steps: int, lr: float, batch_size: int, rng: np.random.Generator,
             log: Callable[[str], None] | None = None) -> list[dict]:
    """Plain cross-entropy minibatch Adam."""
    opt = ad.adam(lr)
    history = []
    for step in range(steps):
        rows = rng.choice(len(pool), min(batch_size, len(pool)), replace=False)
        loss = cross_entropy(logits(p, pool.x[rows]), pool.y[rows])
        if not np.isfinite(loss.item()):
            raise FloatingPointError("non-finite cross-entropy")
        opt.apply(p.params, ad.backward(loss, p.params))
        row = {"step": step, "l_cls": loss.item()}
        history.append(row)
        if log is not None:
            log(format_log_line(row))
    return history


def meta_config_for(mode: str, base: MetaConfig) -> MetaConfig:
    cfg = MetaConfig(**base.to_dict())
    if mode == "meta_no_gi":
        cfg.lambda_gi = 0.0
    elif mode == "meta_no_ood":
        cfg.lambda_ood = 0.0
    return cfg


def train_mode(mode: str, p: Predictor, train: Pool, ds: DomainDataset, cfg: ExperimentConfig,
               seed: int, cell: tuple[int, ...], log: Callable[[str], None] | None = None) -> None:
    if mode in META_MODES:
        mcfg = meta_config_for(mode, cfg.meta)
        n_id = len(train.classes)
        if n_id - mcfg.pseudo_ood_count < 1:
            raise ConfigError(
                f"{mode} needs more than {mcfg.pseudo_ood_count} ID classes per task, dataset leaves {n_id}"
            )
        train_meta(p, train, mcfg, ds.transform, cfg.train_steps,
                   stream(seed, "tasks", *cell), stream(seed, "aug", *cell), log)
        all_class_adapt(p, train, mcfg, ds.transform, stream(seed, "adapt", *cell), cfg.adapt_steps)
    elif mode == "dual":
        train_dual(p, train, ds.transform, cfg.dual, cfg.train_steps,
                   stream(seed, "tasks", *cell), stream(seed, "aug", *cell), log)
    else:
        train_ce(p, train, cfg.train_steps, cfg.ce_lr, cfg.ce_batch_size, stream(seed, "tasks", *cell), log)


def evaluate(p: Predictor, train: Pool, id_test: Pool, ood_test: Pool, detectors: list[str], T: float) -> dict:
    """Per-detector (auroc, aupr) plus ID accuracy."""
    x = np.vstack([id_test.x, ood_test.x])
    is_ood = np.concatenate([np.zeros(len(id_test), bool), np.ones(len(ood_test), bool)])
    out = {"id_accuracy": accuracy(predict(p, id_test.x), id_test.y)}
    for kind in detectors:
        det = Detector(kind, T=T).fit(p, train)
        s = det.score(p, x)
        out[kind] = (auroc(s, is_ood), aupr_out(s, is_ood))
    return out


def run_cell(cfg: ExperimentConfig, ds: DomainDataset, test_domain: int, ood_class: int, seed: int,
             mode: str, log: Callable[[str], None] | None = None) -> tuple[list[EvalRecord], float]:
    start = time.perf_counter()
    train, id_test, ood_test = split_id_ood(ds, test_domain, ood_class)
    id_classes = [c for c in range(ds.n_classes) if c != ood_class]
    train, id_test = train.relabel(id_classes), id_test.relabel(id_classes)
    cell = (test_domain, ood_class)
    p = Predictor.init(ds.input_dim, cfg.hidden, len(id_classes), stream(seed, "init", *cell))
    train_mode(mode, p, train, ds, cfg, seed, cell, log)
    res = evaluate(p, train, id_test, ood_test, cfg.detectors, cfg.meta.T)
    wall = time.perf_counter() - start
    records = [
        EvalRecord(ds.name, test_domain, ood_class, seed, mode, kind, *res[kind], res["id_accuracy"], wall)
        for kind in cfg.detectors
    ]
    return records, wall


def run_experiment(cfg: ExperimentConfig, log: Callable[[str], None] | None = None) -> list[EvalRecord]:
    """Every (mode, test domain, OOD class, seed) cell; records sorted."""
    records: list[EvalRecord] = []
    for seed in cfg.seeds:
        ds = build_dataset(cfg.dataset, seed)
        cfg.validate(ds.n_classes, ds.domains)
        for mode in cfg.modes:
            for td in cfg.test_domains:
                for oc in cfg.ood_classes:
                    where = f"mode={mode} test_domain={td} ood_class={oc} seed={seed}"
                    cell_log = None if log is None else (lambda line, w=where: log(f"{w} {line}"))
                    try:
                        recs, _ = run_cell(cfg, ds, td, oc, seed, mode, cell_log)
                    except Exception as err:
                        raise CellError(f"{where}: {type(err).__name__}: {err}") from err
                    records.extend(recs)
    return sorted(records, key=EvalRecord.sort_key)


# ---------------------------------------------------------------- aggregation


def _mean_se(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def aggregate(records: list[EvalRecord]) -> list[dict]:
    """Mean and standard error per (dataset, mode, detector, test domain), plus
    an ``all`` row pooling every test domain."""
    if not records:
        raise ValueError("nothing to aggregate")
    groups: dict[tuple, list[EvalRecord]] = {}
    for r in records:
        for td in (str(r.test_domain), "all"):
            groups.setdefault((r.dataset, r.mode, r.detector, td), []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3] == "all", k[3])):
        group = groups[key]
        row = dict(zip(("dataset", "mode", "detector", "test_domain"), key))
        row["n"] = len(group)
        row["single"] = int(len(group) == 1)
        for metric in ("auroc", "aupr", "id_accuracy"):
            row[f"{metric}_mean"], row[f"{metric}_se"] = _mean_se([getattr(r, metric) for r in group])
        rows.append(row)
    return rows


# -------------------------------------------------------------------- output


def _csv_text(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def results_csv(records: list[EvalRecord]) -> str:
    return _csv_text(RESULT_COLUMNS, [asdict(r) for r in records])


def write_outputs(cfg: ExperimentConfig, records: list[EvalRecord], out: Path, log_lines: list[str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(records), encoding="utf-8")
    (out / "summary.csv").write_text(_csv_text(SUMMARY_COLUMNS, aggregate(records)), encoding="utf-8")
    timings = {}
    for r in records:
        timings[(r.dataset, r.mode, r.test_domain, r.ood_class, r.seed)] = r.wall_time_seconds
    timing_rows = [dict(zip(TIMING_COLUMNS, (*k, v))) for k, v in sorted(timings.items())]
    (out / "timings.csv").write_text(_csv_text(TIMING_COLUMNS, timing_rows), encoding="utf-8")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "train.log").write_text("".join(line + "\n" for line in log_lines), encoding="utf-8")
