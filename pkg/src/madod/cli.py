"""Command-line entry point: ``madod {run,gradcheck,oracle-metrics,make-data}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checks import CheckResult, gradcheck_suite, metric_oracle_suite
from .configs import bundled
from .data import write_idx
from .harness import ConfigError, ExperimentConfig, build_dataset, run_experiment, write_outputs

log = logging.getLogger("madod")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="madod", description="Meta-learned cross-domain OOD detection experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True,
                     help="JSON config path, or bundled:<name> (bundled: smoke, ablation)")
    run.add_argument("--out", help="output directory (default: config out_dir)")

    grad = sub.add_parser("gradcheck", help="finite-difference checks of reverse-mode gradients")
    grad.add_argument("--nets", type=int, default=100, help="random MLPs to check")

    sub.add_parser("oracle-metrics", help="compare metric sweeps with brute-force oracles")

    data = sub.add_parser("make-data", help="build a dataset and cache it as .npz")
    data.add_argument("--config", help="config whose dataset section to build")
    data.add_argument("--seed", type=int, default=0)
    data.add_argument("--out", help="output .npz path")
    data.add_argument("--fake-mnist", metavar="DIR",
                      help="instead write random MNIST-layout IDX files into DIR (for smoke tests)")
    return parser


def _load_config(ref: str) -> ExperimentConfig:
    path = bundled(ref.split(":", 1)[1]) if ref.startswith("bundled:") else Path(ref)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        return ExperimentConfig.load(path)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read config {path}: {err}") from None
    except ConfigError as err:
        raise UsageError(f"invalid config {path}: {err}") from None


def _report(results: list[CheckResult]) -> int:
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def write_fake_mnist(root: Path, seed: int = 0, n_train: int = 60000, n_test: int = 10000) -> None:
    """Random 28x28 digits in the four standard MNIST IDX files."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    for prefix, n in (("train", n_train), ("t10k", n_test)):
        write_idx(root / f"{prefix}-images-idx3-ubyte", rng.integers(0, 256, (n, 28, 28), dtype=np.uint8))
        write_idx(root / f"{prefix}-labels-idx1-ubyte", rng.integers(0, 10, n, dtype=np.uint8))


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    out = args.out or cfg.out_dir
    if not out:
        raise UsageError("no output directory: pass --out or set out_dir in the config")
    lines: list[str] = []

    def sink(line: str) -> None:
        lines.append(line)
        log.info(line)

    records = run_experiment(cfg, sink)
    write_outputs(cfg, records, Path(out), lines)
    print(f"wrote {len(records)} records to {Path(out) / 'results.csv'}")
    return EXIT_OK


def _cmd_make_data(args) -> int:
    if args.fake_mnist:
        write_fake_mnist(Path(args.fake_mnist), args.seed)
        print(f"wrote random MNIST-layout IDX files to {args.fake_mnist}")
        return EXIT_OK
    if not args.config or not args.out:
        raise UsageError("make-data needs --config and --out (or --fake-mnist DIR)")
    cfg = _load_config(args.config)
    ds = build_dataset(cfg.dataset, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out, x=ds.x, y=ds.y, domain=ds.domain, **ds.extras)
    print(f"wrote {len(ds)} instances of {ds.name} to {out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"madod: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "gradcheck":
            return _report(gradcheck_suite(args.nets))
        if args.command == "oracle-metrics":
            return _report(metric_oracle_suite())
        return _cmd_make_data(args)
    except UsageError as err:
        print(f"madod: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:  # noqa: BLE001
        print(f"madod: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
