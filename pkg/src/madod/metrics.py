"""AUROC, AUPR-out and accuracy, each with a brute-force twin.

Scores are oriented so that larger means "more OOD" and OOD is the positive
class. AUROC counts ties as one half via midranks. AUPR-out is average
precision with one threshold per distinct score. Both sweeps work in integer
counts and finish with a single exactly-rounded sum, so they agree bit for bit
with the O(n^2) oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoredSample:
    score: float
    is_ood: bool


def _split(scores, is_ood) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    is_ood = np.asarray(is_ood, dtype=bool)
    if scores.shape != is_ood.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and the same length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores, is_ood


def from_samples(samples: list[ScoredSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.array([s.score for s in samples]), np.array([s.is_ood for s in samples])


def _distinct_counts(scores: np.ndarray, is_ood: np.ndarray):
    """Per distinct score in ascending order: (#OOD, #ID) at that score."""
    uniq, inverse = np.unique(scores, return_inverse=True)
    pos = np.bincount(inverse, weights=is_ood, minlength=len(uniq)).astype(np.int64)
    tot = np.bincount(inverse, minlength=len(uniq)).astype(np.int64)
    return pos, tot - pos


def auroc(scores, is_ood) -> float:
    """P(score_OOD > score_ID) + P(tie) / 2 from the midrank sum."""
    scores, is_ood = _split(scores, is_ood)
    n_pos, n_neg = int(is_ood.sum()), int((~is_ood).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one ID and one OOD sample")
    pos, neg = _distinct_counts(scores, is_ood)
    tot = pos + neg
    # twice the midrank of each tie group: 2*start + size + 1
    start = np.concatenate([[0], np.cumsum(tot)[:-1]])
    twice_rank_sum = int(np.sum(pos * (2 * start + tot + 1)))
    numerator = twice_rank_sum - n_pos * (n_pos + 1)
    return numerator / (2 * n_pos * n_neg)


def aupr_out(scores, is_ood) -> float:
    """Average precision with OOD as positive, one threshold per distinct score."""
    scores, is_ood = _split(scores, is_ood)
    n_pos = int(is_ood.sum())
    if n_pos == 0:
        raise ValueError("AUPR-out needs at least one OOD sample")
    pos, neg = _distinct_counts(scores, is_ood)
    tp = np.cumsum(pos[::-1])
    fp = np.cumsum(neg[::-1])
    gained = pos[::-1]
    terms = [
        int(d) * int(t) / (n_pos * (int(t) + int(f)))
        for d, t, f in zip(gained, tp, fp)
        if d
    ]
    return math.fsum(terms)


def accuracy(preds, truth) -> float:
    preds, truth = np.asarray(preds), np.asarray(truth)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {truth.shape}")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(preds == truth))


# ------------------------------------------------------------------- oracles


def auroc_pairwise(scores, is_ood) -> float:
    """O(n^2) pair enumeration."""
    scores, is_ood = _split(scores, is_ood)
    pos = [float(s) for s in scores[is_ood]]
    neg = [float(s) for s in scores[~is_ood]]
    if not pos or not neg:
        raise ValueError("AUROC needs at least one ID and one OOD sample")
    twice = 0
    for a in pos:
        for b in neg:
            twice += 2 if a > b else 1 if a == b else 0
    return twice / (2 * len(pos) * len(neg))


def aupr_out_exhaustive(scores, is_ood) -> float:
    """Try every distinct score as a threshold and count directly."""
    scores, is_ood = _split(scores, is_ood)
    n_pos = int(is_ood.sum())
    if n_pos == 0:
        raise ValueError("AUPR-out needs at least one OOD sample")
    pairs = list(zip(scores.tolist(), is_ood.tolist()))
    terms = []
    prev_tp = 0
    for t in sorted(set(scores.tolist()), reverse=True):
        tp = sum(1 for s, o in pairs if s >= t and o)
        fp = sum(1 for s, o in pairs if s >= t and not o)
        if tp > prev_tp:
            terms.append((tp - prev_tp) * tp / (n_pos * (tp + fp)))
        prev_tp = tp
    return math.fsum(terms)
