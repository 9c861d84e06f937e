import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from madod import autodiff as ad
from madod.data import Pool, SyntheticSpec, gen_synthetic, split_id_ood
from madod.dual import (
    DualConfig,
    DualState,
    dual_losses,
    dual_train_step,
    dual_update,
    fit_semantic_gda,
    mixup_pseudo_ood,
    score_threshold,
    train_dual,
)
from madod.gda import fit_gda, gda_score
from madod.model import Predictor, cross_entropy, logits
from madod.transform import AffineTransform


def identity_transform(s_dim=2, v_dim=2):
    d = s_dim + v_dim
    eye = np.eye(d)
    return AffineTransform(eye[:, :s_dim], eye[:, s_dim:], np.zeros(d))


def pool_from(x, y):
    x = np.asarray(x, float)
    return Pool(x, np.asarray(y), np.zeros(len(x), dtype=np.int64), np.arange(len(x)))


@pytest.fixture(scope="module")
def synth():
    ds = gen_synthetic(SyntheticSpec(), seed=21)
    train, _, _ = split_id_ood(ds, 2, 3)
    return ds, train.relabel([0, 1, 2])


# --------------------------------------------------------------- dual update


def test_dual_update_formula():
    st_ = dual_update(DualState(beta1=0.5, lr_sgi=0.1, gamma1=0.1), 0.3, 0.0)
    assert st_.beta1 == pytest.approx(0.52)


def test_dual_update_clamps():
    st_ = dual_update(DualState(beta1=0.01, lr_sgi=1.0, gamma1=0.5), 0.0, 0.0)
    assert st_.beta1 == 0.0


def test_dual_update_fixed_at_boundary():
    st_ = DualState(beta1=0.7, beta2=0.3, gamma1=0.25, gamma2=0.5)
    dual_update(st_, 0.25, 0.5)
    assert (st_.beta1, st_.beta2) == (0.7, 0.3)


def test_dual_update_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        dual_update(DualState(), float("nan"), 0.0)


def test_negative_initial_multiplier_rejected():
    with pytest.raises(ValueError):
        DualState(beta1=-0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50)), min_size=1, max_size=200),
       st.floats(0, 5), st.floats(0, 5))
def test_multipliers_never_negative(values, lr1, lr2):
    state = DualState(lr_sgi=lr1, lr_ood=lr2, gamma1=10.0, gamma2=10.0)
    for r1, r2 in values:
        dual_update(state, r1, r2)
        assert state.beta1 >= 0 and state.beta2 >= 0


# -------------------------------------------------------------------- mixup


def test_mixup_convex_combination():
    t = identity_transform()
    batch = pool_from([[1, 0, 0.3, 0.1]], [0])
    data = pool_from([[1, 0, 0, 0], [0, 1, 0, 0]], [0, 1])
    gda = fit_gda(np.random.default_rng(0).standard_normal((10, 2)), np.zeros(10))
    res = mixup_pseudo_ood(batch, data, t, gda, np.inf, 0.5, 0.5, np.random.default_rng(0))
    np.testing.assert_allclose(res.semantics, [[0.5, 0.5]])
    np.testing.assert_allclose(t.encode_semantic(res.x), [[0.5, 0.5]], atol=1e-12)


def test_mixup_negative_infinite_threshold_rejects_all():
    t = identity_transform()
    data = pool_from(np.random.default_rng(1).standard_normal((20, 4)), np.repeat([0, 1], 10))
    gda = fit_gda(t.encode_semantic(data.x), data.y)
    res = mixup_pseudo_ood(data, data, t, gda, -np.inf, 0.5, 0.5, np.random.default_rng(0))
    assert len(res) == 0 and res.proposed == 20


def test_mixup_partners_have_other_labels():
    t = identity_transform()
    rng = np.random.default_rng(2)
    data = pool_from(rng.standard_normal((30, 4)), np.repeat([0, 1, 2], 10))
    gda = fit_gda(t.encode_semantic(data.x), data.y)
    res = mixup_pseudo_ood(data, data, t, gda, np.inf, 1.0, 0.0, rng)
    # with weight 1 on the batch row the mixture is the row itself
    np.testing.assert_allclose(res.semantics, t.encode_semantic(data.x))
    with pytest.raises(ValueError):
        mixup_pseudo_ood(data.subset([0]), data.subset([0, 1]), t, gda, np.inf, 0.5, 0.5, rng)


def _two_blob_pool(sep, n, rng):
    y = np.repeat([0, 1], n)
    s = rng.standard_normal((2 * n, 2)) + np.where(y[:, None] == 0, -1, 1) * np.array([sep, 0.0])
    return pool_from(np.hstack([s, rng.standard_normal((2 * n, 2))]), y)


def _closed_form_acceptance(sep, n_mc, rng):
    """Acceptance of sample-midpoint mixups under the true class densities."""
    means = [np.array([-sep, 0.0]), np.array([sep, 0.0])]

    def score(s):
        return np.max([multivariate_normal(m, np.eye(2)).logpdf(s) for m in means], axis=0)

    xi = np.percentile(score(rng.standard_normal((n_mc, 2)) + means[1]), 5.0)
    mid = 0.5 * (rng.standard_normal((n_mc, 2)) + means[0]) + 0.5 * (rng.standard_normal((n_mc, 2)) + means[1])
    return np.mean(score(mid) < xi)


@pytest.mark.parametrize("sep", [3.0, 5.0])
def test_midpoint_acceptance_matches_closed_form(sep):
    t = identity_transform()
    rng = np.random.default_rng(3)
    data = _two_blob_pool(sep, 2000, rng)
    gda = fit_semantic_gda(data, t)
    xi = score_threshold(gda, data, t, 5.0)
    res = mixup_pseudo_ood(data, data, t, gda, xi, 0.5, 0.5, rng)
    rate = len(res) / res.proposed
    assert abs(rate - _closed_form_acceptance(sep, 200_000, np.random.default_rng(4))) < 0.03
    assert np.all(res.scores < xi)
    np.testing.assert_allclose(gda_score(gda, res.semantics), res.scores)
    if sep == 5.0:
        assert rate >= 0.9


def test_class_mean_midpoint_is_accepted():
    t = identity_transform()
    data = _two_blob_pool(3.0, 2000, np.random.default_rng(5))
    gda = fit_semantic_gda(data, t)
    xi = score_threshold(gda, data, t, 5.0)
    assert gda_score(gda, gda.means.mean(axis=0)) < xi


# ---------------------------------------------------------------- losses


def test_feature_regularizer_zero_iff_features_match(synth):
    ds, train = synth
    p = Predictor.init(ds.input_dim, [8], 3, np.random.default_rng(0))
    cfg = DualConfig()
    x = train.x[:6]
    _, r, _ = dual_losses(p, x, train.y[:6], x, np.empty((0, x.shape[1])), cfg)
    assert r.item() == 0.0
    _, r, _ = dual_losses(p, x, train.y[:6], x + 1.0, np.empty((0, x.shape[1])), cfg)
    assert r.item() > 0.0


def test_zero_multipliers_reduce_to_plain_adam(synth):
    ds, train = synth
    p = Predictor.init(ds.input_dim, [8], 3, np.random.default_rng(1))
    oracle = p.clone()
    batch = train.subset(np.arange(0, 300, 10))
    x_aug = batch.x + 0.5
    state = DualState(gamma1=1e9, gamma2=1e9)
    opt, ref_opt = ad.adam(3e-3), ad.adam(3e-3)
    for _ in range(3):
        dual_train_step(p, batch, x_aug, np.empty((0, ds.input_dim)), state, DualConfig(), opt)
        g = ad.backward(cross_entropy(logits(oracle, batch.x), batch.y), oracle.params)
        ref_opt.apply(oracle.params, g)
    for a, b in zip(p.params, oracle.params):
        np.testing.assert_allclose(a.data, b.data, atol=1e-10, rtol=0)


def test_satisfied_constraints_drive_multipliers_to_zero(synth):
    ds, train = synth
    p = Predictor.init(ds.input_dim, [8], 3, np.random.default_rng(2))
    state = DualState(beta1=0.3, beta2=0.2, gamma1=1e9, gamma2=1e9, lr_sgi=1e-9, lr_ood=1e-9)
    batch = train.subset(np.arange(20))
    opt = ad.adam()
    prev = (state.beta1, state.beta2)
    for _ in range(5):
        dual_train_step(p, batch, batch.x, batch.x[:3], state, DualConfig(), opt)
        assert state.beta1 <= prev[0] and state.beta2 <= prev[1]
        prev = (state.beta1, state.beta2)
    assert state.beta1 == 0.0 and state.beta2 == 0.0


def test_non_finite_loss_raises(synth):
    ds, train = synth
    p = Predictor.init(ds.input_dim, [8], 3, np.random.default_rng(3))
    batch = train.subset(np.arange(5))
    state = DualState(beta1=1.0)
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        dual_train_step(p, batch, batch.x * np.nan, batch.x[:0], state, DualConfig(), ad.adam())


def test_train_dual_history_and_state_isolation(synth):
    ds, train = synth
    p = Predictor.init(ds.input_dim, [8], 3, np.random.default_rng(4))
    cfg = DualConfig()
    hist = train_dual(p, train, ds.transform, cfg, 30, np.random.default_rng(0), np.random.default_rng(1))
    assert len(hist) == 30
    assert {"step", "l_cls", "r_sgi", "r_ood", "beta1", "beta2", "n_aug_ood"} <= set(hist[0])
    assert all(h["beta1"] >= 0 and h["beta2"] >= 0 for h in hist)
    # the config's initial state is not mutated by training
    assert cfg.state.beta1 == 0.0 and cfg.state.beta2 == 0.0
