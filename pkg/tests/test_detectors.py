import math

import numpy as np
import pytest
from scipy.stats import binom, multivariate_normal

from madod.autodiff import Tensor
from madod.data import Pool
from madod.detectors import Detector, DetectorNotFitted, classify, fit_ddu, msp_from_logits, score
from madod.metrics import auroc
from madod.model import Predictor


def head_only(weight, bias):
    return Predictor([], [Tensor(np.asarray(weight, float), True), Tensor(np.asarray(bias, float), True)])


def identity_features(d=2, k=2):
    """Single ReLU layer with identity weights: features equal non-negative inputs."""
    return Predictor([Tensor(np.eye(d), True), Tensor(np.zeros(d), True)],
                     [Tensor(np.zeros((k, d)), True), Tensor(np.zeros(k), True)])


def pool_from(x, y):
    return Pool(np.asarray(x, float), np.asarray(y), np.zeros(len(x), dtype=np.int64), np.arange(len(x)))


def test_unknown_kind():
    with pytest.raises(ValueError):
        Detector("odin")


def test_msp_uniform_logits():
    p = head_only(np.zeros((7, 3)), np.zeros(7))
    np.testing.assert_allclose(score(Detector("msp"), p, np.ones((2, 3))), -1 / 7, atol=1e-15)


def test_energy_equal_logits():
    p = head_only(np.zeros((2, 1)), np.zeros(2))
    assert score(Detector("energy"), p, np.zeros(1))[0] == pytest.approx(-0.693147, abs=1e-6)


def test_energy_shift_relation():
    rng = np.random.default_rng(0)
    w, b = rng.standard_normal((4, 3)), rng.standard_normal(4)
    x = rng.standard_normal((10, 3))
    det = Detector("energy")
    base = score(det, head_only(w, b), x)
    for r in (-2.5, 0.1, 40.0):
        np.testing.assert_allclose(score(det, head_only(w, b + r), x), base - r, atol=1e-12, rtol=0)


def test_msp_shift_invariant():
    lg = np.random.default_rng(1).standard_normal((20, 5))
    np.testing.assert_allclose(msp_from_logits(lg + 123.0), msp_from_logits(lg), atol=1e-13)


def test_ddu_requires_fit():
    p = Predictor.init(3, [4], 2, np.random.default_rng(0))
    with pytest.raises(DetectorNotFitted):
        score(Detector("ddu"), p, np.zeros(3))


def test_ddu_unimodal_and_deterministic():
    rng = np.random.default_rng(2)
    p = identity_features()
    x = np.abs(rng.standard_normal((300, 2))) + 5.0
    pool = pool_from(x, np.zeros(300, int))
    det = Detector("ddu").fit(p, pool)
    mu = det.gda.means[0]
    far = mu + 5 * np.sqrt(np.diag(det.gda.covariances[0]))
    assert det.score(p, mu)[0] < det.score(p, far)[0]
    again = fit_ddu(p, pool)
    np.testing.assert_array_equal(again.means, det.gda.means)
    np.testing.assert_array_equal(again.covariances, det.gda.covariances)


def test_ddu_two_class_density_oracle():
    rng = np.random.default_rng(3)
    p = identity_features()
    y = np.repeat([0, 1], 50)
    x = np.abs(rng.standard_normal((100, 2)) * [1.0, 0.5] + 4 + 3 * y[:, None])
    pool = pool_from(x, y)
    q = np.abs(rng.standard_normal((12, 2))) * 4
    for marginal in (False, True):
        det = Detector("ddu", marginal=marginal).fit(p, pool)
        g = det.gda
        comps = []
        for k in range(2):
            rows = x[y == k]
            mu = rows.mean(axis=0)
            cov = (rows - mu).T @ (rows - mu) / len(rows)
            cov += 1e-4 * np.trace(cov) / 2 * np.eye(2)
            np.testing.assert_allclose(g.covariances[k], cov, atol=1e-12)
            comps.append(multivariate_normal(mu, cov).logpdf(q))
        comps = np.array(comps)
        ref = np.logaddexp(comps[0] + math.log(0.5), comps[1] + math.log(0.5)) if marginal else comps.max(axis=0)
        np.testing.assert_allclose(det.score(p, q), -ref, atol=1e-10, rtol=0)


def test_ddu_separates_constructed_features():
    rng = np.random.default_rng(4)
    p = identity_features()
    y = np.repeat([0, 1], 200)
    centers = np.array([[2.0, 10.0], [10.0, 2.0]])
    train = pool_from(np.abs(rng.standard_normal((400, 2)) + centers[y]), y)
    det = Detector("ddu").fit(p, train)
    id_x = np.abs(rng.standard_normal((200, 2)) + centers[rng.integers(0, 2, 200)])
    ood_x = np.abs(rng.standard_normal((200, 2)) + [10.0, 10.0])
    s = det.score(p, np.vstack([id_x, ood_x]))
    assert auroc(s, np.r_[np.zeros(200, bool), np.ones(200, bool)]) > 0.9


def test_classify_extremes_and_monotone():
    rng = np.random.default_rng(5)
    p = Predictor.init(3, [5], 3, rng)
    x = rng.standard_normal((50, 3))
    det = Detector("msp")
    assert classify(det, p, x, -np.inf).all()
    assert not classify(det, p, x, np.inf).any()
    s = score(det, p, x)
    prev = np.ones(50, bool)
    for w in np.sort(s):
        cur = classify(det, p, x, w)
        assert not np.any(cur & ~prev)
        prev = cur


def test_percentile_threshold_false_positive_rate():
    rng = np.random.default_rng(6)
    p = Predictor.init(4, [8], 3, rng)
    det = Detector("energy")
    calib = rng.standard_normal((4000, 4))
    held = rng.standard_normal((4000, 4))
    w = np.percentile(score(det, p, calib), 95)
    fpr = classify(det, p, held, w).mean()
    lo, hi = binom.interval(0.999, 4000, 0.05)
    assert lo / 4000 <= fpr <= hi / 4000
