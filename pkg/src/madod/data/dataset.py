from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class Instance:
    x: np.ndarray
    y: int
    domain: int
    latent_s: np.ndarray | None = None
    latent_v: np.ndarray | None = None


@dataclass(frozen=True)
class Pool:
    """A bag of labelled instances stored column-wise.

    ``index`` holds each row's position in the parent dataset so pools cut
    from the same dataset can be checked for overlap.
    """

    x: np.ndarray
    y: np.ndarray
    domain: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.y)

    def subset(self, rows) -> Pool:
        rows = np.asarray(rows, dtype=np.intp)
        return Pool(self.x[rows], self.y[rows], self.domain[rows], self.index[rows])

    def relabel(self, classes) -> Pool:
        """Map original class ids onto ``0..len(classes)-1``."""
        lookup = {int(c): i for i, c in enumerate(classes)}
        try:
            y = np.array([lookup[int(c)] for c in self.y], dtype=np.int64)
        except KeyError as err:
            raise ValueError(f"class {err.args[0]} not in label map {list(classes)}") from None
        return Pool(self.x, y, self.domain, self.index)


@dataclass
class DomainDataset:
    x: np.ndarray
    y: np.ndarray
    domain: np.ndarray
    n_classes: int
    domains: list[int]
    latent_s: np.ndarray | None = None
    latent_v: np.ndarray | None = None
    name: str = "dataset"
    transform: object | None = None
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.y)
        if self.x.shape[0] != n or self.domain.shape[0] != n:
            raise ValueError("x, y and domain must have the same length")
        if n and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if not set(np.unique(self.domain)) <= set(self.domains):
            raise ValueError("instance domain not in the dataset's domain list")
        if (self.latent_s is None) != (self.latent_v is None):
            raise ValueError("latent_s and latent_v come together")

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> Instance:
        return Instance(
            self.x[i],
            int(self.y[i]),
            int(self.domain[i]),
            None if self.latent_s is None else self.latent_s[i],
            None if self.latent_v is None else self.latent_v[i],
        )

    def __iter__(self) -> Iterator[Instance]:
        return (self[i] for i in range(len(self)))

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    def pool(self, mask=None) -> Pool:
        rows = np.arange(len(self)) if mask is None else np.flatnonzero(mask)
        return Pool(self.x[rows], self.y[rows], self.domain[rows], rows)


def split_id_ood(ds: DomainDataset, test_domain: int, ood_class: int) -> tuple[Pool, Pool, Pool]:
    """Training pool from every other domain minus ``ood_class``; ID and OOD
    test pools from ``test_domain``. Labels keep their original ids."""
    if not 0 <= ood_class < ds.n_classes:
        raise ValueError(f"ood_class {ood_class} outside [0, {ds.n_classes})")
    if test_domain not in ds.domains:
        raise ValueError(f"unknown test domain {test_domain}")
    in_test = ds.domain == test_domain
    is_ood = ds.y == ood_class
    pools = (
        ds.pool(~in_test & ~is_ood),
        ds.pool(in_test & ~is_ood),
        ds.pool(in_test & is_ood),
    )
    for label, pool in zip(("train", "id-test", "ood-test"), pools):
        if len(pool) == 0:
            raise ValueError(
                f"empty {label} pool for test_domain={test_domain}, ood_class={ood_class}"
            )
    return pools


def ood_class_schedule(n_classes: int, rng: np.random.Generator, fraction: float = 0.4) -> list[int]:
    """Distinct random OOD classes until at least ``fraction`` of them are covered."""
    count = math.ceil(round(fraction * n_classes, 9))
    return [int(c) for c in rng.permutation(n_classes)[:count]]
