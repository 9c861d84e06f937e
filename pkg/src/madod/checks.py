"""Self-check suites behind the ``gradcheck`` and ``oracle-metrics`` commands."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TOL
from .data import Pool
from .meta import MetaConfig, build_task, inner_adapt, outer_loss
from .metrics import aupr_out, aupr_out_exhaustive, auroc, auroc_pairwise
from .model import Predictor, cross_entropy, logits
from .transform import AffineTransform

# pre-activations closer than this to a ReLU kink make central differences unreliable
KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value < self.tolerance)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: {self.value:.3g} (tol {self.tolerance:g})"


def _near_kink(p: Predictor, x: np.ndarray) -> bool:
    z = x
    for w, b in zip(p.phi[0::2], p.phi[1::2]):
        pre = z @ w.data.T + b.data
        if np.min(np.abs(pre)) < KINK_MARGIN:
            return True
        z = np.maximum(pre, 0.0)
    return False


def _random_net(rng: np.random.Generator) -> tuple[Predictor, np.ndarray, np.ndarray]:
    while True:
        d_in = int(rng.integers(2, 6))
        hidden = [int(h) for h in rng.integers(2, 7, int(rng.integers(1, 3)))]
        k = int(rng.integers(2, 5))
        p = Predictor.init(d_in, hidden, k, rng)
        for t in p.params:
            t.data += 0.1 * rng.standard_normal(t.shape)
        n = int(rng.integers(3, 7))
        x = rng.standard_normal((n, d_in))
        if not _near_kink(p, x):
            return p, x, rng.integers(0, k, n)


def mlp_gradcheck(n_nets: int = 100, seed: int = 0) -> CheckResult:
    """Worst relative error of CE gradients over random small MLPs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        p, x, y = _random_net(rng)
        analytic = ad.backward(cross_entropy(logits(p, x), y), p.params)
        numeric = ad.numerical_grad(lambda: cross_entropy(logits(p, x), y).item(), [t.data for t in p.params])
        worst = max(worst, ad.max_relative_error(analytic, numeric))
    return CheckResult(f"mlp cross-entropy gradients ({n_nets} nets)", worst, TOL.grad_rel)


def _primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    a = lambda *s: rng.standard_normal(s)
    pos = lambda *s: rng.uniform(0.5, 2.0, s)
    away = lambda *s: rng.choice([-1.0, 1.0], s) * rng.uniform(0.2, 1.5, s)
    return {
        "add": (lambda u, v: ad.tsum(ad.add(u, v) * u), [a(3, 4), a(4)]),
        "sub": (lambda u, v: ad.tsum(ad.sub(u, v) * u), [a(3, 4), a(3, 1)]),
        "mul": (lambda u, v: ad.tsum(ad.mul(u, v)), [a(2, 3), a(2, 3)]),
        "div": (lambda u, v: ad.tsum(ad.div(u, v)), [a(2, 3), pos(2, 3)]),
        "matmul": (lambda u, v: ad.tsum(ad.matmul(u, v) ** 2), [a(3, 4), a(4, 2)]),
        "neg": (lambda u: ad.tsum(ad.neg(u) * u), [a(5)]),
        "power": (lambda u: ad.tsum(ad.power(u, 3.0)), [a(2, 2)]),
        "transpose": (lambda u, v: ad.tsum(ad.transpose(u) * v), [a(2, 3), a(3, 2)]),
        "reshape": (lambda u, v: ad.tsum(ad.reshape(u, (3, 2)) * v), [a(2, 3), a(3, 2)]),
        "take": (lambda u: ad.tsum(ad.take(u, [2, 0, 2], axis=0) ** 2), [a(3, 2)]),
        "relu": (lambda u: ad.tsum(ad.relu(u) * u), [away(3, 3)]),
        "exp": (lambda u: ad.tsum(ad.exp(u)), [a(4)]),
        "log": (lambda u: ad.tsum(ad.log(u)), [pos(4)]),
        "absolute": (lambda u: ad.tsum(ad.absolute(u) * u), [away(4)]),
        "mean": (lambda u: ad.mean(ad.mean(u, axis=0) ** 2), [a(3, 4)]),
        "tmax": (lambda u: ad.tsum(ad.tmax(u, axis=1) ** 2), [a(3, 4)]),
        "logsumexp": (lambda u: ad.tsum(ad.logsumexp(u, axis=1) ** 2), [a(3, 4)]),
        "softmax": (lambda u, v: ad.tsum(ad.softmax(u, axis=1) * v), [a(3, 4), a(3, 4)]),
        "log_softmax": (lambda u, v: ad.tsum(ad.log_softmax(u, axis=1) * v), [a(3, 4), a(3, 4)]),
        "l1_distance": (lambda u, v: ad.tsum(ad.l1_distance(u, v)), [a(3, 4), a(3, 4) + 3.0]),
        "squared_hinge": (lambda u: ad.tsum(ad.squared_hinge(u)), [away(6)]),
    }


def primitive_gradchecks(seed: int = 1) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, (fn, arrays) in _primitive_cases(rng).items():
        leaves = [Tensor(arr, requires_grad=True) for arr in arrays]
        analytic = ad.backward(fn(*leaves), leaves)
        numeric = ad.numerical_grad(lambda: fn(*[Tensor(t.data) for t in leaves]).item(), [t.data for t in leaves])
        results.append(CheckResult(f"primitive {name}", ad.max_relative_error(analytic, numeric), TOL.grad_rel))
    return results


def second_order_check(seed: int = 2, width: int = 4) -> CheckResult:
    """Outer-loss gradient through one differentiable inner step vs finite differences."""
    rng = np.random.default_rng(seed)
    d_in, s_dim, v_dim, k = 6, 3, 2, 4
    basis = np.linalg.qr(rng.standard_normal((d_in, s_dim + v_dim)))[0]
    transform = AffineTransform(basis[:, :s_dim], basis[:, s_dim:], np.zeros(d_in))
    n = 12 * k
    y = np.repeat(np.arange(k), 12)
    x = transform.decode(rng.standard_normal((n, s_dim)) + 2.0 * np.eye(k, s_dim)[y], rng.standard_normal((n, v_dim)))
    pool = Pool(x, y, np.zeros(n, dtype=np.int64), np.arange(n))
    cfg = MetaConfig(lambda_gi=0.5, lambda_ood=0.1, inner_lr=0.5, shots=3, m_in=-1.0, m_out=1.0)
    task = build_task(pool, cfg, rng)

    while True:
        p = Predictor.init(d_in, [width], k, rng)
        if not _near_kink(p, np.vstack([task.support.x, task.query.x, task.ood.x])):
            break

    def loss() -> Tensor:
        adapted = inner_adapt(p, task, cfg, transform, np.random.default_rng(seed + 100))
        return outer_loss(p, task, adapted, cfg)[0]

    analytic = ad.backward(loss(), p.params)
    numeric = ad.numerical_grad(lambda: loss().item(), [t.data for t in p.params])
    return CheckResult(f"second-order meta-gradient (width {width})", ad.max_abs_error(analytic, numeric),
                       TOL.second_order_abs)


def gradcheck_suite(n_nets: int = 100) -> list[CheckResult]:
    return [mlp_gradcheck(n_nets), *primitive_gradchecks(), second_order_check()]


def metric_oracle_suite(n_cases: int = 200, max_n: int = 500, seed: int = 3) -> list[CheckResult]:
    """Count of sweep/oracle mismatches on random tied instances; passing means zero."""
    rng = np.random.default_rng(seed)
    roc_bad = pr_bad = 0
    for _ in range(n_cases):
        n = int(rng.integers(2, max_n + 1))
        # few distinct levels so ties are common
        scores = rng.integers(0, int(rng.integers(2, 40)), n) / 7.0
        is_ood = rng.random(n) < rng.uniform(0.05, 0.95)
        is_ood[0], is_ood[-1] = True, False
        roc_bad += auroc(scores, is_ood) != auroc_pairwise(scores, is_ood)
        pr_bad += aupr_out(scores, is_ood) != aupr_out_exhaustive(scores, is_ood)
    return [
        CheckResult(f"auroc sweep == pairwise oracle ({n_cases} cases)", float(roc_bad), 0.5),
        CheckResult(f"aupr-out sweep == exhaustive oracle ({n_cases} cases)", float(pr_bad), 0.5),
    ]
