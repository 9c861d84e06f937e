"""Central finite differences for checking reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..config import TOL


def numerical_grad(
    fn: Callable[[], float], arrays: Sequence[np.ndarray], h: float = TOL.fd_step
) -> list[np.ndarray]:
    """Central differences of ``fn()`` w.r.t. each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(
    analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray], floor: float = TOL.fd_rel_floor
) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom, initial=0.0)))
    return worst


def max_abs_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    return max(float(np.max(np.abs(a - n), initial=0.0)) for a, n in zip(analytic, numeric))
