"""Single-loop primal-dual training.

The primal objective is ``CE + beta1 * R_SGI + beta2 * R_OOD``, minimized with
Adam. ``R_SGI`` is the feature-space distance between each instance and a
DataAug copy of it. ``R_OOD`` is the energy-margin loss against pseudo-OODs
made by mixing the semantic codes of two differently-labelled instances and
keeping only mixtures the semantic GDA finds unlikely. After each primal step
the multipliers take a projected ascent step toward the tolerances
``gamma1`` and ``gamma2``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Pool
from .gda import GdaModel, fit_gda, gda_score
from .meta import DISTANCES, energy_margin_loss, format_log_line
from .model import Predictor, cross_entropy, energy_from_logits, featurize, head_logits
from .transform import TransformModel, data_aug


@dataclass
class DualState:
    beta1: float = 0.0
    beta2: float = 0.0
    gamma1: float = 0.5
    gamma2: float = 0.5
    lr_primal: float = 3e-3
    lr_sgi: float = 0.05
    lr_ood: float = 0.05

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("dual variables must be non-negative")


@dataclass
class DualConfig:
    batch_size: int = 32
    T: float = 1.0
    m_in: float = -10.0
    m_out: float = -8.0
    distance: str = "l1"
    # semantic mixup coefficients
    mix_a: float = 0.5
    mix_b: float = 0.5
    # GDA acceptance threshold as a percentile of training scores
    xi_percentile: float = 1.0
    ridge: float | None = None
    state: DualState = field(default_factory=DualState)

    def to_dict(self) -> dict:
        return asdict(self)


def dual_update(state: DualState, r_sgi: float, r_ood: float) -> DualState:
    """``beta <- max(0, beta + lr * (R - gamma))`` for both multipliers."""
    if not (np.isfinite(r_sgi) and np.isfinite(r_ood)):
        raise FloatingPointError("dual update needs finite regularizer values")
    state.beta1 = max(0.0, state.beta1 + state.lr_sgi * (r_sgi - state.gamma1))
    state.beta2 = max(0.0, state.beta2 + state.lr_ood * (r_ood - state.gamma2))
    return state


def fit_semantic_gda(train_pool: Pool, transform: TransformModel, ridge: float | None = None) -> GdaModel:
    return fit_gda(transform.encode_semantic(train_pool.x), train_pool.y, ridge)


def score_threshold(gda: GdaModel, train_pool: Pool, transform: TransformModel, percentile: float) -> float:
    scores = gda_score(gda, transform.encode_semantic(train_pool.x))
    return float(np.percentile(scores, percentile))


@dataclass
class MixupResult:
    x: np.ndarray
    semantics: np.ndarray
    scores: np.ndarray
    proposed: int

    def __len__(self) -> int:
        return len(self.x)


def mixup_pseudo_ood(
    batch: Pool,
    dataset: Pool,
    transform: TransformModel,
    gda: GdaModel,
    xi: float,
    mix_a: float,
    mix_b: float,
    rng: np.random.Generator,
) -> MixupResult:
    """Mix each batch row's semantics with a differently-labelled partner and
    decode the low-density mixtures with a random variation."""
    partners = np.empty(len(batch), dtype=np.intp)
    for i, label in enumerate(batch.y):
        candidates = np.flatnonzero(dataset.y != label)
        if len(candidates) == 0:
            raise ValueError(f"no partner with a label other than {label}")
        partners[i] = candidates[rng.integers(len(candidates))]
    s_mix = mix_a * transform.encode_semantic(batch.x) + mix_b * transform.encode_semantic(dataset.x[partners])
    scores = np.atleast_1d(gda_score(gda, s_mix))
    keep = scores < xi
    s_keep = s_mix[keep]
    v = rng.standard_normal((len(s_keep), transform.v_dim))
    x_new = transform.decode(s_keep, v) if len(s_keep) else np.empty((0, transform.x_dim))
    assert np.all(scores[keep] < xi)
    return MixupResult(x_new, s_keep, scores[keep], len(batch))


def dual_losses(
    p: Predictor, x, y, x_aug, x_ood, cfg: DualConfig
) -> tuple[Tensor, Tensor, Tensor | None]:
    z = featurize(p, x)
    lg = head_logits(z, *p.psi)
    l_cls = cross_entropy(lg, y)
    r_sgi = ad.mean(DISTANCES[cfg.distance](z, featurize(p, x_aug)))
    r_ood = None
    if len(x_ood):
        e_in = energy_from_logits(lg, cfg.T)
        e_out = energy_from_logits(head_logits(featurize(p, x_ood), *p.psi), cfg.T)
        r_ood = energy_margin_loss(e_in, e_out, cfg.m_in, cfg.m_out)
    return l_cls, r_sgi, r_ood


def dual_train_step(
    p: Predictor,
    batch: Pool,
    x_aug: np.ndarray,
    aug_ood: np.ndarray,
    state: DualState,
    cfg: DualConfig,
    optimizer: ad.Optimizer,
) -> dict:
    """One Adam step on the Lagrangian, then the dual ascent step."""
    l_cls, r_sgi, r_ood = dual_losses(p, batch.x, batch.y, x_aug, aug_ood, cfg)
    loss = l_cls
    if state.beta1 > 0:
        loss = loss + state.beta1 * r_sgi
    if r_ood is not None and state.beta2 > 0:
        loss = loss + state.beta2 * r_ood
    if not np.isfinite(loss.item()):
        raise FloatingPointError("non-finite dual-train loss")
    optimizer.apply(p.params, ad.backward(loss, p.params))

    r_ood_val = 0.0 if r_ood is None else r_ood.item()
    dual_update(state, r_sgi.item(), r_ood_val)
    assert state.beta1 >= 0 and state.beta2 >= 0
    return {
        "l_cls": l_cls.item(),
        "r_sgi": r_sgi.item(),
        "r_ood": r_ood_val,
        "n_aug_ood": int(len(aug_ood)),
        "loss": loss.item(),
        "beta1": state.beta1,
        "beta2": state.beta2,
    }


def train_dual(
    p: Predictor,
    train_pool: Pool,
    transform: TransformModel,
    cfg: DualConfig,
    steps: int,
    batch_rng: np.random.Generator,
    aug_rng: np.random.Generator,
    log: Callable[[str], None] | None = None,
) -> list[dict]:
    state = replace(cfg.state)
    gda = fit_semantic_gda(train_pool, transform, cfg.ridge)
    xi = score_threshold(gda, train_pool, transform, cfg.xi_percentile)
    opt = ad.adam(state.lr_primal)
    history = []
    start = time.perf_counter()
    for step in range(steps):
        rows = batch_rng.choice(len(train_pool), min(cfg.batch_size, len(train_pool)), replace=False)
        batch = train_pool.subset(rows)
        x_aug, _ = data_aug(transform, batch.x, batch.y, aug_rng)
        mixed = mixup_pseudo_ood(batch, train_pool, transform, gda, xi, cfg.mix_a, cfg.mix_b, aug_rng)
        diag = dual_train_step(p, batch, x_aug, mixed.x, state, cfg, opt)
        row = {"step": step, **diag, "wall": time.perf_counter() - start}
        history.append(row)
        if log is not None:
            log(format_log_line(row))
    return history
