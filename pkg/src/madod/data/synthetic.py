"""Multi-domain data with known semantic and variation factors.

Each instance is ``x = A s + B v + c + noise`` where ``s`` is drawn around a
class prototype and ``v`` around a per-domain variation vector. ``[A B]`` has
orthogonal columns, so the matching :class:`AffineTransform` recovers both
factors exactly when the noise is zero.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..transform import AffineTransform
from .dataset import DomainDataset


@dataclass
class SyntheticSpec:
    n_classes: int = 4
    n_domains: int = 3
    s_dim: int = 4
    v_dim: int = 2
    x_dim: int = 16
    samples_per_cell: int = 100
    class_std: float = 1.0
    prototype_scale: float = 2.5
    # None -> drawn from the generator seed
    prototypes: list[list[float]] | None = None
    domain_variations: list[list[float]] | None = None
    variation_scale: float = 2.0
    variation_jitter: float = 0.3
    semantic_gain: float = 1.0
    variation_gain: float = 1.0
    offset_scale: float = 0.5
    noise: float = 0.0
    mixing: list[list[float]] | None = field(default=None, repr=False)

    def validate(self) -> None:
        if self.n_classes < 2 or self.n_domains < 2:
            raise ValueError("need at least two classes and two domains")
        if self.s_dim + self.v_dim > self.x_dim:
            raise ValueError(
                f"x_dim={self.x_dim} cannot hold s_dim+v_dim={self.s_dim + self.v_dim} independent factors"
            )
        if self.samples_per_cell < 1:
            raise ValueError("samples_per_cell must be positive")
        if min(self.class_std, self.variation_jitter, self.noise) < 0:
            raise ValueError("scales must be non-negative")
        if self.prototypes is not None and np.shape(self.prototypes) != (self.n_classes, self.s_dim):
            raise ValueError("prototypes must be n_classes x s_dim")
        if self.domain_variations is not None and np.shape(self.domain_variations) != (self.n_domains, self.v_dim):
            raise ValueError("domain_variations must be n_domains x v_dim")

    def to_dict(self) -> dict:
        return asdict(self)


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def gen_synthetic(spec: SyntheticSpec, seed: int) -> DomainDataset:
    spec.validate()
    rng = np.random.default_rng(seed)
    k = spec.s_dim + spec.v_dim
    if spec.mixing is not None:
        mixing = np.asarray(spec.mixing, dtype=np.float64)
        if mixing.shape != (spec.x_dim, k):
            raise ValueError(f"mixing must be {spec.x_dim} x {k}, got {mixing.shape}")
    else:
        mixing = _orthonormal_columns(rng, spec.x_dim, k)
        mixing[:, : spec.s_dim] *= spec.semantic_gain
        mixing[:, spec.s_dim :] *= spec.variation_gain
    offset = rng.normal(0.0, spec.offset_scale, spec.x_dim)
    transform = AffineTransform(mixing[:, : spec.s_dim], mixing[:, spec.s_dim :], offset)

    if spec.prototypes is not None:
        prototypes = np.asarray(spec.prototypes, dtype=np.float64)
    else:
        prototypes = rng.normal(0.0, spec.prototype_scale, (spec.n_classes, spec.s_dim))
    if spec.domain_variations is not None:
        variations = np.asarray(spec.domain_variations, dtype=np.float64)
    else:
        variations = rng.normal(0.0, spec.variation_scale, (spec.n_domains, spec.v_dim))

    n = spec.samples_per_cell
    ys, ds, ss, vs = [], [], [], []
    for e in range(spec.n_domains):
        for c in range(spec.n_classes):
            ss.append(prototypes[c] + spec.class_std * rng.standard_normal((n, spec.s_dim)))
            vs.append(variations[e] + spec.variation_jitter * rng.standard_normal((n, spec.v_dim)))
            ys.append(np.full(n, c))
            ds.append(np.full(n, e))
    s, v = np.vstack(ss), np.vstack(vs)
    x = transform.decode(s, v)
    if spec.noise > 0:
        x = x + spec.noise * rng.standard_normal(x.shape)

    return DomainDataset(
        x=x,
        y=np.concatenate(ys),
        domain=np.concatenate(ds),
        n_classes=spec.n_classes,
        domains=list(range(spec.n_domains)),
        latent_s=s,
        latent_v=v,
        name="synthetic",
        transform=transform,
        extras={"prototypes": prototypes, "domain_variations": variations},
    )
