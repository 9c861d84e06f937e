"""Bi-level meta-training with pseudo-OOD tasks.

Each task hides one or more training classes as pseudo-OOD. The inner loop
takes a gradient step on the classification head (restricted to the retained
classes) using support cross-entropy plus the G-invariance penalty. The outer
loop scores the adapted head on the query set with cross-entropy plus the
energy-margin penalty that pushes query energies below ``m_in`` and
pseudo-OOD energies above ``m_out``.

The head gradient of the inner loss has a closed form in the features and
head weights, and it is built from ordinary graph ops. Backpropagating the
outer loss through the adapted head therefore picks up the second-order
terms in the featurizer parameters.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Pool
from .model import Predictor, cross_entropy, energy_from_logits, featurize, head_logits
from .transform import TransformModel, data_aug


@dataclass
class MetaConfig:
    lambda_gi: float = 0.1
    lambda_ood: float = 0.1
    inner_lr: float = 10**-3.5
    outer_lr: float = 10**-4.75
    T: float = 1.0
    m_in: float = -10.0
    m_out: float = -8.0
    tasks_per_batch: int = 4
    shots: int = 5
    pseudo_ood_count: int = 1
    inner_steps: int = 1
    distance: str = "l1"
    gi_space: str = "output"
    outer_optimizer: str = "sgd"
    # all-class adaptation; None falls back to inner_lr / shots
    adapt_lr: float | None = None
    adapt_shots: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lambda_gi < 0 or self.lambda_ood < 0:
            raise ValueError("regularization weights must be non-negative")
        if not (self.inner_lr >= 0 and self.outer_lr >= 0):
            raise ValueError("learning rates must be non-negative")
        if self.tasks_per_batch < 1 or self.shots < 1 or self.pseudo_ood_count < 1:
            raise ValueError("tasks_per_batch, shots and pseudo_ood_count must be >= 1")
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {sorted(DISTANCES)}")
        if self.gi_space not in ("output", "feature"):
            raise ValueError("gi_space must be 'output' or 'feature'")
        if self.outer_optimizer not in ("sgd", "adam"):
            raise ValueError("outer_optimizer must be 'sgd' or 'adam'")
        if not self.T > 0 or not self.m_in < self.m_out:
            raise ValueError("need T > 0 and m_in < m_out")

    def to_dict(self) -> dict:
        return asdict(self)


def _l1(a: Tensor, b: Tensor) -> Tensor:
    return ad.l1_distance(a, b, axis=1)


def _sq_l2(a: Tensor, b: Tensor) -> Tensor:
    d = a - b
    return ad.tsum(d * d, axis=1)


DISTANCES: dict[str, Callable[[Tensor, Tensor], Tensor]] = {"l1": _l1, "sq_l2": _sq_l2}


def _distance_grad(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """d distance / d a; the L1 sign is a constant almost everywhere."""
    if kind == "l1":
        return ad.sign(a - b)
    return 2.0 * (a - b)


# ---------------------------------------------------------------------- tasks


@dataclass(frozen=True, eq=False)
class MetaTask:
    support: Pool
    query: Pool
    ood: Pool
    pseudo_ood_classes: tuple[int, ...]
    retained_classes: tuple[int, ...]
    relabel: dict[int, int] = field(repr=False)

    def local_labels(self, pool: Pool) -> np.ndarray:
        return np.array([self.relabel[int(c)] for c in pool.y], dtype=np.intp)


def build_task(train_pool: Pool, cfg: MetaConfig, rng: np.random.Generator) -> MetaTask:
    classes = train_pool.classes
    if len(classes) < cfg.pseudo_ood_count + 2:
        raise ValueError(
            f"task needs {cfg.pseudo_ood_count + 2} classes, training pool has {len(classes)}"
        )
    chosen = rng.choice(len(classes), cfg.pseudo_ood_count, replace=False)
    pseudo = tuple(int(c) for c in np.sort(classes[chosen]))
    retained = tuple(int(c) for c in classes if int(c) not in pseudo)

    support, query, ood = [], [], []
    for c in retained:
        rows = np.flatnonzero(train_pool.y == c)
        if len(rows) < 2 * cfg.shots:
            raise ValueError(f"class {c} has {len(rows)} instances, a task needs {2 * cfg.shots}")
        pick = rng.choice(rows, 2 * cfg.shots, replace=False)
        support.append(pick[: cfg.shots])
        query.append(pick[cfg.shots :])
    for c in pseudo:
        rows = np.flatnonzero(train_pool.y == c)
        if len(rows) < cfg.shots:
            raise ValueError(f"pseudo-OOD class {c} has {len(rows)} instances, a task needs {cfg.shots}")
        ood.append(rng.choice(rows, cfg.shots, replace=False))

    return MetaTask(
        support=train_pool.subset(np.concatenate(support)),
        query=train_pool.subset(np.concatenate(query)),
        ood=train_pool.subset(np.concatenate(ood)),
        pseudo_ood_classes=pseudo,
        retained_classes=retained,
        relabel={c: i for i, c in enumerate(retained)},
    )


def check_task(task: MetaTask) -> None:
    """Raise AssertionError if any disjointness condition is violated."""
    s, q, o = (set(p.index.tolist()) for p in (task.support, task.query, task.ood))
    assert not s & q and not s & o and not q & o, "task sets overlap"
    id_classes = set(task.support.y.tolist()) | set(task.query.y.tolist())
    assert not id_classes & set(task.ood.y.tolist()), "ID and pseudo-OOD classes overlap"
    assert set(task.ood.y.tolist()) <= set(task.pseudo_ood_classes)


# ------------------------------------------------------------- regularizers


def gi_penalty(z: Tensor, z_aug: Tensor, weight, bias, cfg: MetaConfig) -> Tensor:
    """Mean distance between clean and augmented outputs (or features)."""
    dist = DISTANCES[cfg.distance]
    if cfg.gi_space == "feature":
        return ad.mean(dist(z, z_aug))
    p = ad.softmax(head_logits(z, weight, bias), axis=1)
    pa = ad.softmax(head_logits(z_aug, weight, bias), axis=1)
    return ad.mean(dist(p, pa))


def r_gi(
    p: Predictor,
    head: tuple,
    x,
    transform: TransformModel,
    cfg: MetaConfig,
    rng: np.random.Generator,
    x_aug=None,
) -> Tensor:
    if x_aug is None:
        x_aug, _ = data_aug(transform, x, None, rng)
    return gi_penalty(featurize(p, x), featurize(p, x_aug), *head, cfg)


def energy_margin_loss(e_in: Tensor, e_out: Tensor, m_in: float, m_out: float) -> Tensor:
    """Squared hinges on ID energies above ``m_in`` and OOD energies below ``m_out``,
    each averaged over its own set."""
    if e_in.size == 0 or e_out.size == 0:
        raise ValueError("energy margin loss needs non-empty ID and OOD sets")
    return ad.mean(ad.squared_hinge(e_in - m_in)) + ad.mean(ad.squared_hinge(m_out - e_out))


def r_ood(p: Predictor, head: tuple, q_x, o_x, cfg: MetaConfig) -> Tensor:
    if len(q_x) == 0 or len(o_x) == 0:
        raise ValueError("R_OOD needs non-empty query and pseudo-OOD sets")
    e_in = energy_from_logits(head_logits(featurize(p, q_x), *head), cfg.T)
    e_out = energy_from_logits(head_logits(featurize(p, o_x), *head), cfg.T)
    return energy_margin_loss(e_in, e_out, cfg.m_in, cfg.m_out)


# ----------------------------------------------------------------- inner loop


def inner_head_gradient(z: Tensor, z_aug: Tensor, y_local, weight, bias, cfg: MetaConfig) -> tuple[Tensor, Tensor]:
    """Closed-form gradient of ``CE + lambda_gi * R_GI`` w.r.t. a linear head.

    For logits ``l = z W^T + b`` the CE part contributes ``(softmax(l) - onehot)/n``
    per row. Output-space R_GI adds ``p * (delta - <delta, p>)`` for the clean
    rows and the negated counterpart for augmented rows, where ``delta`` is the
    derivative of the distance w.r.t. the clean probabilities. Feature-space
    R_GI does not depend on the head and contributes nothing.
    """
    n = z.shape[0]
    prob = ad.softmax(head_logits(z, weight, bias), axis=1)
    onehot = np.zeros(prob.shape)
    onehot[np.arange(n), y_local] = 1.0
    coef = (prob - onehot) * (1.0 / n)
    if cfg.lambda_gi > 0 and cfg.gi_space == "output":
        prob_aug = ad.softmax(head_logits(z_aug, weight, bias), axis=1)
        delta = _distance_grad(prob, prob_aug, cfg.distance)
        u = prob * (delta - ad.tsum(delta * prob, axis=1, keepdims=True))
        u_aug = prob_aug * (delta - ad.tsum(delta * prob_aug, axis=1, keepdims=True))
        scale = cfg.lambda_gi / n
        coef = coef + u * scale
        coef_aug = u_aug * (-scale)
        grad_w = ad.transpose(coef) @ z + ad.transpose(coef_aug) @ z_aug
        grad_b = ad.tsum(coef, axis=0) + ad.tsum(coef_aug, axis=0)
        return grad_w, grad_b
    return ad.transpose(coef) @ z, ad.tsum(coef, axis=0)


def inner_loss(z: Tensor, z_aug: Tensor, y_local, weight, bias, cfg: MetaConfig) -> Tensor:
    loss = cross_entropy(head_logits(z, weight, bias), y_local)
    if cfg.lambda_gi > 0:
        loss = loss + cfg.lambda_gi * gi_penalty(z, z_aug, weight, bias, cfg)
    return loss


@dataclass
class Adapted:
    weight: Tensor
    bias: Tensor
    r_gi: float
    support_loss: float


def inner_adapt(
    p: Predictor,
    task: MetaTask,
    cfg: MetaConfig,
    transform: TransformModel,
    rng: np.random.Generator,
) -> Adapted:
    """``psi_i' = psi_i - inner_lr * grad_psi_i (CE + lambda_gi R_GI)`` on the
    support set, repeated ``inner_steps`` times with fresh augmentations.

    The returned head lives on the graph, so the caller can differentiate an
    outer loss through it.
    """
    rows = list(task.retained_classes)
    weight = ad.take(p.psi[0], rows, axis=0)
    bias = ad.take(p.psi[1], rows, axis=0)
    y_local = task.local_labels(task.support)
    z = featurize(p, task.support.x)
    first_gi = first_loss = None
    for _ in range(max(cfg.inner_steps, 1)):
        x_aug, _ = data_aug(transform, task.support.x, None, rng)
        z_aug = featurize(p, x_aug)
        if first_gi is None:
            first_gi = gi_penalty(z, z_aug, weight, bias, cfg).item()
            first_loss = cross_entropy(head_logits(z, weight, bias), y_local).item() + cfg.lambda_gi * first_gi
            if not np.isfinite(first_loss):
                raise FloatingPointError("non-finite inner loss")
        if cfg.inner_steps == 0:
            break
        grad_w, grad_b = inner_head_gradient(z, z_aug, y_local, weight, bias, cfg)
        weight = weight - cfg.inner_lr * grad_w
        bias = bias - cfg.inner_lr * grad_b
    return Adapted(weight, bias, first_gi, first_loss)


def outer_loss(p: Predictor, task: MetaTask, adapted: Adapted, cfg: MetaConfig) -> tuple[Tensor, dict]:
    lg_q = head_logits(featurize(p, task.query.x), adapted.weight, adapted.bias)
    l_cls = cross_entropy(lg_q, task.local_labels(task.query))
    e_in = energy_from_logits(lg_q, cfg.T)
    e_out = energy_from_logits(head_logits(featurize(p, task.ood.x), adapted.weight, adapted.bias), cfg.T)
    reg = energy_margin_loss(e_in, e_out, cfg.m_in, cfg.m_out)
    total = l_cls + cfg.lambda_ood * reg if cfg.lambda_ood > 0 else l_cls
    return total, {"l_cls": l_cls.item(), "r_gi": adapted.r_gi, "r_ood": reg.item(), "outer": total.item()}


# ----------------------------------------------------------------- outer loop


def make_outer_optimizer(cfg: MetaConfig) -> ad.Optimizer:
    return ad.Optimizer(cfg.outer_optimizer, cfg.outer_lr)


def meta_gradients(
    p: Predictor, tasks: list[MetaTask], cfg: MetaConfig, transform: TransformModel, rng: np.random.Generator
) -> tuple[list[np.ndarray], list[dict]]:
    """Gradient of the summed outer loss w.r.t. ``p.params``; tasks are
    differentiated one at a time and summed in task order."""
    params = p.params
    total = [np.zeros_like(t.data) for t in params]
    diagnostics = []
    for i, task in enumerate(tasks):
        adapted = inner_adapt(p, task, cfg, transform, rng)
        loss, diag = outer_loss(p, task, adapted, cfg)
        if not np.isfinite(diag["outer"]):
            raise FloatingPointError(f"non-finite outer loss in task {i}")
        grads = ad.backward(loss, params)
        for j, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {params[j].name} in task {i}")
            total[j] += g
        diagnostics.append(diag)
    return total, diagnostics


def meta_step(
    p: Predictor,
    tasks: list[MetaTask],
    cfg: MetaConfig,
    transform: TransformModel,
    rng: np.random.Generator,
    optimizer: ad.Optimizer | None = None,
) -> list[dict]:
    """One outer update of ``(phi, psi)`` over a batch of tasks; returns per-task diagnostics."""
    if len(tasks) != cfg.tasks_per_batch:
        raise ValueError(f"expected {cfg.tasks_per_batch} tasks, got {len(tasks)}")
    grads, diagnostics = meta_gradients(p, tasks, cfg, transform, rng)
    (optimizer or ad.sgd(cfg.outer_lr)).apply(p.params, grads)
    return diagnostics


def train_meta(
    p: Predictor,
    train_pool: Pool,
    cfg: MetaConfig,
    transform: TransformModel,
    steps: int,
    task_rng: np.random.Generator,
    aug_rng: np.random.Generator,
    log: Callable[[str], None] | None = None,
) -> list[dict]:
    """Run ``steps`` meta-steps; returns one summary dict per step."""
    opt = make_outer_optimizer(cfg)
    history = []
    start = time.perf_counter()
    for step in range(steps):
        tasks = [build_task(train_pool, cfg, task_rng) for _ in range(cfg.tasks_per_batch)]
        diag = meta_step(p, tasks, cfg, transform, aug_rng, opt)
        row = {
            "step": step,
            "l_cls": float(np.mean([d["l_cls"] for d in diag])),
            "r_gi": float(np.mean([d["r_gi"] for d in diag])),
            "r_ood": float(np.mean([d["r_ood"] for d in diag])),
            "outer": float(np.sum([d["outer"] for d in diag])),
            "wall": time.perf_counter() - start,
        }
        history.append(row)
        if log is not None:
            log(format_log_line(row))
    return history


def format_log_line(row: dict) -> str:
    parts = []
    for k, v in row.items():
        parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts)


# ------------------------------------------------------- all-class adaptation


def sample_per_class(pool: Pool, shots: int, rng: np.random.Generator) -> Pool:
    rows = []
    for c in pool.classes:
        idx = np.flatnonzero(pool.y == c)
        rows.append(rng.choice(idx, min(shots, len(idx)), replace=False))
    return pool.subset(np.concatenate(rows))


def all_class_adapt(
    p: Predictor,
    train_pool: Pool,
    cfg: MetaConfig,
    transform: TransformModel,
    rng: np.random.Generator,
    steps: int,
) -> list[Tensor]:
    """Fine-tune the full head on every ID class with the featurizer frozen.

    ``train_pool`` labels must already be head rows. Each step draws a fresh
    class-balanced support set and applies one gradient step of
    ``CE + lambda_gi * R_GI``. Returns ``p.psi`` (updated in place).
    """
    lr = cfg.inner_lr if cfg.adapt_lr is None else cfg.adapt_lr
    shots = cfg.shots if cfg.adapt_shots is None else cfg.adapt_shots
    opt = ad.sgd(lr)
    for _ in range(steps):
        batch = sample_per_class(train_pool, shots, rng)
        x_aug, _ = data_aug(transform, batch.x, None, rng)
        z = Tensor(featurize(p, batch.x).data)
        z_aug = Tensor(featurize(p, x_aug).data)
        loss = inner_loss(z, z_aug, batch.y, p.psi[0], p.psi[1], cfg)
        if not np.isfinite(loss.item()):
            raise FloatingPointError("non-finite adaptation loss")
        opt.apply(p.psi, ad.backward(loss, p.psi))
    return p.psi
