"""Gaussian discriminant analysis: one full-covariance Gaussian per class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = np.log(2.0 * np.pi)
RELATIVE_RIDGE = 1e-4


@dataclass(frozen=True, eq=False)
class GdaModel:
    classes: np.ndarray
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d, d), ridge included
    priors: np.ndarray
    cholesky: np.ndarray
    log_dets: np.ndarray

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def fit_gda(s, y, ridge: float | None = None) -> GdaModel:
    """Class means, MLE covariances plus ``ridge * I`` and class frequencies.

    With ``ridge=None`` each class gets ``1e-4 * trace(cov) / dim``.
    """
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    y = np.asarray(y)
    n, d = s.shape
    classes = np.unique(y)
    means, covs, priors, chols, logdets = [], [], [], [], []
    for c in classes:
        rows = s[y == c]
        if len(rows) < d + 1:
            raise ValueError(f"class {c} has {len(rows)} samples; GDA in {d} dims needs at least {d + 1}")
        mu = rows.mean(axis=0)
        centred = rows - mu
        cov = centred.T @ centred / len(rows)
        r = RELATIVE_RIDGE * np.trace(cov) / d if ridge is None else ridge
        cov = cov + r * np.eye(d)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError(f"covariance of class {c} is singular after ridge {r:g}") from None
        means.append(mu)
        covs.append(cov)
        priors.append(len(rows) / n)
        chols.append(chol)
        logdets.append(2.0 * np.log(np.diag(chol)).sum())
    return GdaModel(
        classes=classes,
        means=np.array(means),
        covariances=np.array(covs),
        priors=np.array(priors),
        cholesky=np.array(chols),
        log_dets=np.array(logdets),
    )


def class_log_density(m: GdaModel, s) -> np.ndarray:
    """log N(s; mu_k, Sigma_k) for every row of ``s`` and class k, shape (n, K)."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if s.shape[1] != m.dim:
        raise ValueError(f"GDA fitted in {m.dim} dims, got {s.shape[1]}")
    out = np.empty((s.shape[0], len(m.classes)))
    for k in range(len(m.classes)):
        w = solve_triangular(m.cholesky[k], (s - m.means[k]).T, lower=True)
        out[:, k] = -0.5 * (m.dim * LOG_2PI + m.log_dets[k] + (w * w).sum(axis=0))
    return out


def gda_score(m: GdaModel, s, marginal: bool = False):
    """Highest class-conditional log-density, or the prior-weighted log
    marginal when ``marginal`` is set. Returns a float for a single vector."""
    single = np.ndim(s) == 1
    dens = class_log_density(m, s)
    if marginal:
        w = dens + np.log(m.priors)
        top = w.max(axis=1)
        score = top + np.log(np.exp(w - top[:, None]).sum(axis=1))
    else:
        score = dens.max(axis=1)
    return float(score[0]) if single else score
