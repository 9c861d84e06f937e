"""Predictor ``f = h ∘ g``: an MLP featurizer and a linear softmax head."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"MADODCKP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EnergyParams:
    T: float = 1.0
    m_in: float = -10.0
    m_out: float = -8.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"temperature must be positive, got {self.T}")
        if not self.m_in < self.m_out:
            raise ValueError(f"need m_in < m_out, got {self.m_in} >= {self.m_out}")


class Predictor:
    """Featurizer layers ``phi`` (weight, bias pairs, ReLU after each) and a
    head ``psi = [W (K x d_feat), b (K)]``. Parameters are leaf tensors whose
    arrays the optimizers update in place."""

    def __init__(self, phi: Sequence[Tensor], psi: Sequence[Tensor]):
        self.phi = list(phi)
        self.psi = list(psi)
        if len(self.phi) % 2:
            raise ValueError("featurizer parameters come in (weight, bias) pairs")
        if len(self.psi) != 2:
            raise ValueError("head parameters are [weight, bias]")

    @classmethod
    def init(cls, input_dim: int, hidden: Sequence[int], n_classes: int, rng: np.random.Generator) -> Predictor:
        """He-style uniform init scaled by fan-in."""
        phi = []
        fan_in = input_dim
        for i, width in enumerate(hidden):
            bound = np.sqrt(6.0 / fan_in)
            phi.append(Tensor(rng.uniform(-bound, bound, (width, fan_in)), True, f"phi.{i}.weight"))
            phi.append(Tensor(np.zeros(width), True, f"phi.{i}.bias"))
            fan_in = width
        bound = np.sqrt(1.0 / fan_in)
        psi = [
            Tensor(rng.uniform(-bound, bound, (n_classes, fan_in)), True, "psi.weight"),
            Tensor(np.zeros(n_classes), True, "psi.bias"),
        ]
        return cls(phi, psi)

    @property
    def input_dim(self) -> int:
        return self.phi[0].shape[1] if self.phi else self.psi[0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.psi[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.psi[0].shape[0]

    @property
    def params(self) -> list[Tensor]:
        return self.phi + self.psi

    def clone(self) -> Predictor:
        return Predictor(
            [Tensor(p.data.copy(), True, p.name) for p in self.phi],
            [Tensor(p.data.copy(), True, p.name) for p in self.psi],
        )

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.params}


def featurize(p: Predictor, x) -> Tensor:
    z = ad.as_tensor(x)
    if z.ndim != 2 or z.shape[1] != p.input_dim:
        raise ad.ShapeError("featurize", z.shape, (None, p.input_dim))
    for w, b in zip(p.phi[0::2], p.phi[1::2]):
        z = ad.relu(z @ w.T + b)
    return z


def head_logits(z, weight, bias) -> Tensor:
    return ad.as_tensor(z) @ ad.transpose(weight) + bias


def logits(p: Predictor, x) -> Tensor:
    return head_logits(featurize(p, x), *p.psi)


def forward(p: Predictor, x) -> Tensor:
    return ad.softmax(logits(p, x), axis=1)


def energy_from_logits(lg, T: float = 1.0) -> Tensor:
    """-T * logsumexp(logits / T) per row."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    return -T * ad.logsumexp(ad.as_tensor(lg) * (1.0 / T), axis=-1)


def energy(p: Predictor, x, T: float = 1.0) -> Tensor:
    return energy_from_logits(logits(p, x), T)


def cross_entropy(lg, y) -> Tensor:
    """Mean negative log-likelihood of integer labels ``y``."""
    lg = ad.as_tensor(lg)
    y = np.asarray(y, dtype=np.intp)
    logp = ad.log_softmax(lg, axis=1)
    onehot = np.zeros(lg.shape)
    onehot[np.arange(len(y)), y] = 1.0
    return -ad.tsum(logp * onehot) * (1.0 / len(y))


def predict(p: Predictor, x) -> np.ndarray:
    return np.argmax(logits(p, x).data, axis=1)


# ----------------------------------------------------------------- checkpoint


def save_checkpoint(p: Predictor, path: str | Path) -> None:
    """Versioned binary dump: header, then (name, shape, little-endian f8 data)."""
    params = p.params
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        fh.write(struct.pack("<I", len(p.phi)))
        for t in params:
            name = (t.name or "").encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Predictor:
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a predictor checkpoint")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (n_phi,) = struct.unpack_from("<I", buf, 16)
    off = 20
    tensors = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        n = int(np.prod(shape))
        if off + 8 * n > len(buf):
            raise ValueError(f"{path}: truncated tensor {name!r}")
        data = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
        tensors.append(Tensor(data, True, name or None))
    return Predictor(tensors[:n_phi], tensors[n_phi:])
