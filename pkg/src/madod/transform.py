"""Domain transformation model ``G(x, v) = D(E_s(x), v)`` and DataAug.

Two concrete models are provided. :class:`AffineTransform` is the exact
inverse of the synthetic generator's affine decoder. :class:`ColorTransform`
treats ColoredMNIST's colour channel as the variation factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TransformModel:
    """Interface: ``encode_semantic``, ``encode_variation`` and ``decode``
    all operate on row batches."""

    s_dim: int
    v_dim: int
    x_dim: int

    def encode_semantic(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def encode_variation(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decode(self, s: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class AffineTransform(TransformModel):
    """``x = A s + B v + c``; encoders are the rows of ``pinv([A B])``."""

    semantic_basis: np.ndarray
    variation_basis: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        mixing = np.hstack([self.semantic_basis, self.variation_basis])
        d, k = mixing.shape
        if self.offset.shape != (d,):
            raise ValueError(f"offset shape {self.offset.shape} does not match x dim {d}")
        if k > d or np.linalg.matrix_rank(mixing) < k:
            raise ValueError("decoder mixing matrix [A B] is rank deficient")
        object.__setattr__(self, "_pinv", np.linalg.pinv(mixing))

    @property
    def s_dim(self) -> int:
        return self.semantic_basis.shape[1]

    @property
    def v_dim(self) -> int:
        return self.variation_basis.shape[1]

    @property
    def x_dim(self) -> int:
        return self.semantic_basis.shape[0]

    @property
    def semantic_projection(self) -> np.ndarray:
        """Matrix ``P`` with ``E_s(x) = P (x - c)``."""
        return self._pinv[: self.s_dim]

    def encode_semantic(self, x):
        return (np.atleast_2d(x) - self.offset) @ self._pinv[: self.s_dim].T

    def encode_variation(self, x):
        return (np.atleast_2d(x) - self.offset) @ self._pinv[self.s_dim :].T

    def decode(self, s, v):
        s, v = np.atleast_2d(s), np.atleast_2d(v)
        if s.shape[1] != self.s_dim or v.shape[1] != self.v_dim:
            raise ValueError(
                f"decode expects s dim {self.s_dim} and v dim {self.v_dim}, got {s.shape[1]} and {v.shape[1]}"
            )
        return s @ self.semantic_basis.T + v @ self.variation_basis.T + self.offset


@dataclass(frozen=True)
class ColorTransform(TransformModel):
    """Two-channel images flattened channel-major. The semantic code is the
    grey image (sum of channels) and the variation code is the per-channel
    share of ink. Decoding puts all ink into the channel with the larger
    variation coordinate, so a standard-normal draw picks a colour uniformly.
    """

    pixels: int

    @property
    def s_dim(self) -> int:
        return self.pixels

    @property
    def v_dim(self) -> int:
        return 2

    @property
    def x_dim(self) -> int:
        return 2 * self.pixels

    def _channels(self, x):
        x = np.atleast_2d(x)
        if x.shape[1] != self.x_dim:
            raise ValueError(f"expected {self.x_dim} features, got {x.shape[1]}")
        return x[:, : self.pixels], x[:, self.pixels :]

    def encode_semantic(self, x):
        red, green = self._channels(x)
        return red + green

    def encode_variation(self, x):
        red, green = self._channels(x)
        mass = np.stack([red.sum(axis=1), green.sum(axis=1)], axis=1)
        total = mass.sum(axis=1, keepdims=True)
        return np.divide(mass, total, out=np.full_like(mass, 0.5), where=total > 0)

    def decode(self, s, v):
        s, v = np.atleast_2d(s), np.atleast_2d(v)
        if s.shape[1] != self.pixels or v.shape[1] != 2:
            raise ValueError("decode expects a grey image and a 2-d colour code")
        green = (v[:, 1] > v[:, 0])[:, None]
        return np.hstack([np.where(green, 0.0, s), np.where(green, s, 0.0)])


def g_transform(model: TransformModel, x, v_target) -> np.ndarray:
    """Move ``x`` into the domain described by ``v_target``."""
    x = np.atleast_2d(x)
    v = np.atleast_2d(v_target)
    if x.shape[1] != model.x_dim:
        raise ValueError(f"x has {x.shape[1]} features, model expects {model.x_dim}")
    if v.shape[1] != model.v_dim:
        raise ValueError(f"v_target has dim {v.shape[1]}, model expects {model.v_dim}")
    if v.shape[0] == 1 and x.shape[0] > 1:
        v = np.repeat(v, x.shape[0], axis=0)
    return model.decode(model.encode_semantic(x), v)


def data_aug(model: TransformModel, x, y, rng) -> tuple[np.ndarray, np.ndarray]:
    """Same semantics, fresh standard-normal variation; labels pass through."""
    x = np.atleast_2d(x)
    v_new = rng.standard_normal((x.shape[0], model.v_dim))
    return model.decode(model.encode_semantic(x), v_new), y
