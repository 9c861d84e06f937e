import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madod.metrics import (
    ScoredSample,
    accuracy,
    aupr_out,
    aupr_out_exhaustive,
    auroc,
    auroc_pairwise,
    from_samples,
)


def _labels(n_id, n_ood):
    return np.r_[np.zeros(n_id, bool), np.ones(n_ood, bool)]


def test_auroc_perfect_separation():
    assert auroc([0, 1, 2, 3], _labels(2, 2)) == 1.0


def test_auroc_all_ties_is_half():
    assert auroc([0.3] * 7, _labels(3, 4)) == 0.5


def test_auroc_six_sample_case():
    s = [0.1, 0.4, 0.35, 0.8, 0.9, 0.5]
    y = _labels(4, 2)
    # OOD 0.9 beats all 4, OOD 0.5 beats 3 of 4
    assert auroc(s, y) == 7 / 8
    assert auroc(s, y) == auroc_pairwise(s, y)


def test_aupr_six_sample_case_matches_hand_value():
    s = [0.1, 0.4, 0.35, 0.8, 0.9, 0.5]
    y = _labels(4, 2)
    # ranks: 0.9 (OOD, P=1), 0.8 (ID), 0.5 (OOD, P=2/3)
    assert aupr_out(s, y) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3, abs=1e-15)
    assert aupr_out(s, y) == aupr_out_exhaustive(s, y)


def test_aupr_perfect_separation():
    assert aupr_out([0, 1, 2, 3], _labels(2, 2)) == 1.0


def test_aupr_all_ties_equals_ood_fraction():
    assert aupr_out([1.0] * 10, _labels(7, 3)) == pytest.approx(0.3, abs=1e-15)


def test_aupr_random_scores_approach_prevalence():
    rng = np.random.default_rng(3)
    y = rng.random(20000) < 0.2
    val = aupr_out(rng.random(20000), y)
    assert abs(val - y.mean()) < 0.02


def test_single_class_errors():
    with pytest.raises(ValueError):
        auroc([1, 2], [False, False])
    with pytest.raises(ValueError):
        auroc([1, 2], [True, True])
    with pytest.raises(ValueError):
        aupr_out([1, 2], [False, False])


def test_non_finite_scores_rejected():
    with pytest.raises(ValueError):
        auroc([np.nan, 1.0], [True, False])


def test_scored_sample_adapter():
    s, y = from_samples([ScoredSample(0.2, False), ScoredSample(0.9, True)])
    assert auroc(s, y) == 1.0


def test_accuracy_examples():
    v = np.array([0, 1, 1, 0])
    assert accuracy(v, v) == 1.0
    assert accuracy(v, 1 - v) == 0.0
    with pytest.raises(ValueError):
        accuracy([0, 1], [0])


def test_accuracy_random_near_chance():
    rng = np.random.default_rng(11)
    acc = accuracy(rng.integers(0, 7, 1000), rng.integers(0, 7, 1000))
    # 4 binomial standard errors
    assert abs(acc - 1 / 7) < 4 * math.sqrt((1 / 7) * (6 / 7) / 1000)


tied_scores = st.lists(st.integers(0, 8).map(lambda i: i / 4), min_size=2, max_size=60)


@settings(max_examples=150, deadline=None)
@given(tied_scores, st.data())
def test_sweeps_equal_oracles_exactly(scores, data):
    n = len(scores)
    y = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    y = np.array(y)
    if y.any() and not y.all():
        assert auroc(scores, y) == auroc_pairwise(scores, y)
    if y.any():
        assert aupr_out(scores, y) == aupr_out_exhaustive(scores, y)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-40, 40), min_size=4, max_size=40, unique=True), st.randoms())
def test_auroc_rank_invariance_and_negation(scores, rnd):
    y = np.array([rnd.random() < 0.5 for _ in scores])
    y[0], y[1] = True, False
    s = np.array(scores, dtype=float)
    a = auroc(s, y)
    assert auroc(np.exp(s), y) == a
    assert auroc(3 * s - 1, y) == a
    assert auroc(-s, y) == pytest.approx(1 - a, abs=1e-15)
    assert aupr_out(s**3 + s, y) == aupr_out(s, y)
