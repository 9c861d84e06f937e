"""Post-hoc OOD scores over a trained predictor. Higher means more OOD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Pool
from .gda import GdaModel, fit_gda, gda_score
from .model import Predictor, energy_from_logits, featurize, logits

KINDS = ("msp", "energy", "ddu")


class DetectorNotFitted(RuntimeError):
    pass


@dataclass
class Detector:
    kind: str
    T: float = 1.0
    marginal: bool = False
    gda: GdaModel | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown detector {self.kind!r}; choose from {KINDS}")

    def fit(self, p: Predictor, train_pool: Pool) -> Detector:
        if self.kind == "ddu":
            self.gda = fit_ddu(p, train_pool)
        return self

    def score(self, p: Predictor, x) -> np.ndarray:
        return score(self, p, x)


def fit_ddu(p: Predictor, train_pool: Pool, ridge: float | None = None) -> GdaModel:
    return fit_gda(featurize(p, train_pool.x).data, train_pool.y, ridge)


def msp_from_logits(lg: np.ndarray) -> np.ndarray:
    shifted = lg - lg.max(axis=1, keepdims=True)
    prob = np.exp(shifted)
    prob /= prob.sum(axis=1, keepdims=True)
    return -prob.max(axis=1)


def score(det: Detector, p: Predictor, x) -> np.ndarray:
    x = np.atleast_2d(x)
    if det.kind == "msp":
        return msp_from_logits(logits(p, x).data)
    if det.kind == "energy":
        return energy_from_logits(logits(p, x), det.T).data
    if det.gda is None:
        raise DetectorNotFitted("ddu detector must be fitted before scoring")
    return -np.atleast_1d(gda_score(det.gda, featurize(p, x).data, marginal=det.marginal))


def classify(det: Detector, p: Predictor, x, threshold: float) -> np.ndarray:
    """True where the instance is flagged OOD (score >= threshold)."""
    return score(det, p, x) >= threshold
