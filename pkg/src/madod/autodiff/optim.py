"""First-order optimizers that update leaf tensors in place."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class Optimizer:
    """SGD or bias-corrected Adam.

    ``apply`` mutates ``param.data`` in place and bumps ``step_count`` by one.
    Adam moment buffers are created lazily on the first call and are shaped
    like the parameters they track.
    """

    kind: str = "sgd"
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")

    def apply(self, params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> Sequence[Tensor]:
        if len(params) != len(grads):
            raise ValueError(f"{len(params)} params but {len(grads)} gradients")
        for i, (p, g) in enumerate(zip(params, grads)):
            if g.shape != p.shape:
                raise ValueError(f"gradient {i} has shape {g.shape}, param has {p.shape}")
            if not np.all(np.isfinite(g)):
                label = p.name or f"#{i}"
                raise FloatingPointError(f"non-finite gradient for parameter {label}")

        self.step_count += 1
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p.data -= self.learning_rate * g
            return params

        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def sgd(learning_rate: float) -> Optimizer:
    return Optimizer("sgd", learning_rate)


def adam(learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Optimizer:
    return Optimizer("adam", learning_rate, beta1, beta2, eps)
