import numpy as np
import pytest

from madod.data import SyntheticSpec, gen_synthetic
from madod.transform import AffineTransform, ColorTransform, data_aug, g_transform


@pytest.fixture(scope="module")
def ds():
    return gen_synthetic(SyntheticSpec(samples_per_cell=200, variation_jitter=0.3), seed=5)


class _FixedDraw:
    """Generator stand-in whose standard_normal returns preset values."""

    def __init__(self, values):
        self.values = values

    def standard_normal(self, shape):
        assert shape == self.values.shape
        return self.values


def test_reconstruction_identity(ds):
    t = ds.transform
    np.testing.assert_allclose(g_transform(t, ds.x, t.encode_variation(ds.x)), ds.x, atol=1e-10)


def test_semantics_preserved_under_transform(ds):
    t = ds.transform
    v = np.random.default_rng(0).standard_normal((len(ds), t.v_dim)) * 5
    np.testing.assert_allclose(t.encode_semantic(g_transform(t, ds.x, v)), t.encode_semantic(ds.x), atol=1e-10)


def test_single_target_broadcasts(ds):
    t = ds.transform
    out = g_transform(t, ds.x[:5], np.zeros(t.v_dim))
    np.testing.assert_allclose(t.encode_variation(out), np.zeros((5, t.v_dim)), atol=1e-10)


def test_dim_mismatch_errors(ds):
    t = ds.transform
    with pytest.raises(ValueError):
        g_transform(t, ds.x[:2], np.zeros(t.v_dim + 1))
    with pytest.raises(ValueError):
        g_transform(t, ds.x[:2, :-1], np.zeros(t.v_dim))


def test_transformed_instance_lands_in_target_domain(ds):
    t = ds.transform
    v1 = ds.extras["domain_variations"][1]
    for c in range(ds.n_classes):
        src = ds.x[(ds.domain == 0) & (ds.y == c)]
        tgt = ds.x[(ds.domain == 1) & (ds.y == c)]
        moved = g_transform(t, src, v1)
        mu, sd = tgt.mean(axis=0), tgt.std(axis=0)
        assert np.all(np.abs(moved.mean(axis=0) - mu) < 3 * sd)


def test_data_aug_passes_label_through(ds):
    y = ds.y[:10]
    _, y_out = data_aug(ds.transform, ds.x[:10], y, np.random.default_rng(0))
    assert y_out is y


def test_data_aug_identity_draw(ds):
    t = ds.transform
    x = ds.x[:7]
    x_aug, _ = data_aug(t, x, None, _FixedDraw(t.encode_variation(x)))
    np.testing.assert_allclose(x_aug, x, atol=1e-10)


def test_data_aug_variation_is_standard_normal(ds):
    t = ds.transform
    x = np.repeat(ds.x[:1], 10000, axis=0)
    x_aug, _ = data_aug(t, x, None, np.random.default_rng(1))
    v = t.encode_variation(x_aug)
    assert np.all(np.abs(v.mean(axis=0)) < 0.05)
    np.testing.assert_allclose(t.encode_semantic(x_aug), t.encode_semantic(x), atol=1e-10)


def test_affine_transform_rejects_rank_deficient():
    a = np.eye(5, 2)
    with pytest.raises(ValueError):
        AffineTransform(a, a[:, :1], np.zeros(5))


def test_color_transform_round_trip():
    t = ColorTransform(4)
    grey = np.array([[0.1, 0.0, 0.5, 1.0]])
    red = t.decode(grey, np.array([[1.0, 0.0]]))
    green = g_transform(t, red, np.array([0.0, 1.0]))
    np.testing.assert_array_equal(green, [[0, 0, 0, 0, 0.1, 0.0, 0.5, 1.0]])
    np.testing.assert_array_equal(t.encode_semantic(green), grey)
    np.testing.assert_allclose(g_transform(t, red, t.encode_variation(red)), red)


def test_color_aug_picks_each_colour():
    t = ColorTransform(3)
    x = np.tile([[0.2, 0.3, 0.0, 0.0, 0.0, 0.0]], (4000, 1))
    x_aug, _ = data_aug(t, x, None, np.random.default_rng(0))
    green_share = np.mean(t.encode_variation(x_aug)[:, 1])
    assert abs(green_share - 0.5) < 0.03
