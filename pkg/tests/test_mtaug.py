import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from veinmt import diffcore as dc
from veinmt.data import Dataset
from veinmt.diffcore import Array
from veinmt.mtaug import (AugConfig, MotionBasis, MTAugmentor, animate, augment, collect_deltas, draw_motion,
                          fit_basis, sample_motion)

from .conftest import SMALL
from .oracles import principal_angles


def stub_dataset(labels, shape=(4, 4)):
    n = len(labels)
    imgs = np.zeros((n,) + shape, np.float32)
    for i in range(n):
        imgs[i] = i  # the stub detector reads the index back from the pixels
    return Dataset(imgs, np.asarray(labels), [f"c{c}" for c in sorted(set(labels))], [f"s{i}" for i in range(n)])


KNOWN = np.random.default_rng(0).normal(0, 3, (6, 2, 2))


def stub_detector(images):
    return KNOWN[np.asarray(images)[:, 0, 0].astype(int)]


# ---------------------------------------------------------------------------- deltas

def test_consecutive_pairs_only():
    d = collect_deltas(stub_dataset([0, 0, 0]), stub_detector)
    assert d.shape == (2, 4)
    np.testing.assert_array_equal(d[0], (KNOWN[0] - KNOWN[1]).ravel())
    np.testing.assert_array_equal(d[1], (KNOWN[1] - KNOWN[2]).ravel())


def test_multiple_classes_and_singletons(caplog):
    with caplog.at_level(logging.WARNING):
        d = collect_deltas(stub_dataset([0, 0, 1, 2, 2, 2]), stub_detector)
    assert len(d) == 1 + 2
    np.testing.assert_array_equal(d[2], (KNOWN[4] - KNOWN[5]).ravel())
    assert "single sample" in caplog.text


def test_identical_images_give_zero_delta(small_model):
    img = np.random.default_rng(0).random(SMALL).astype(np.float32)
    ds = Dataset(np.stack([img, img]), np.array([0, 0]), ["a"], ["x", "y"])
    assert not collect_deltas(ds, small_model.detector).any()


# ---------------------------------------------------------------------------- PCA

def test_axis_aligned_example():
    b = fit_basis(np.array([[1, 0], [-1, 0], [2, 0], [-2, 0]], float), n=10)
    assert b.n == 2
    np.testing.assert_allclose(np.abs(b.components[0]), [1, 0], atol=1e-12)
    assert b.variances[1] == pytest.approx(0, abs=1e-12)
    assert b.variances[0] == pytest.approx(10 / 3)


def test_identical_deltas_have_zero_variance():
    d = np.tile([1.0, -2.0, 0.5, 3.0], (5, 1))
    b = fit_basis(d, n=3)
    np.testing.assert_allclose(b.variances, 0, atol=1e-12)
    np.testing.assert_array_equal(b.mean, d[0])


@pytest.mark.parametrize("seed", range(3))
def test_matches_dense_svd_oracle(seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(40, 10)) @ rng.normal(size=(10, 10))
    b = fit_basis(d, n=10)
    c = d - d.mean(axis=0)
    _, s, vt = np.linalg.svd(c, full_matrices=False)
    np.testing.assert_allclose(b.variances, s ** 2 / (len(d) - 1), atol=1e-6)
    for k in (1, 3, 5):
        assert principal_angles(b.components[:k], vt[:k]).max() <= 1e-4
    np.testing.assert_allclose(b.components @ b.components.T, np.eye(10), atol=1e-6)
    assert (np.diff(b.variances) <= 1e-12).all()
    for row in b.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_n_clamping():
    rng = np.random.default_rng(0)
    assert fit_basis(rng.normal(size=(50, 6)), n=10).n == 6      # 2K = 6 < 10
    assert fit_basis(rng.normal(size=(4, 10)), n=10).n == 3      # m - 1
    assert fit_basis(rng.normal(size=(50, 10)), n=10).n == 10    # default honoured
    with pytest.raises(ValueError):
        fit_basis(rng.normal(size=(1, 10)))


# ---------------------------------------------------------------------------- sampling

@pytest.fixture(scope="module")
def basis10():
    rng = np.random.default_rng(11)
    return fit_basis(rng.normal(size=(60, 10)) * np.linspace(3, 0.2, 10), n=10)


def test_one_hot_and_zero_scale(basis10):
    rng = np.random.default_rng(0)
    w = np.zeros(10)
    w[0] = 1
    np.testing.assert_allclose(sample_motion(basis10, rng, 1.0, w),
                               np.sqrt(basis10.variances[0]) * basis10.components[0])
    assert not sample_motion(basis10, rng, 0.0).any()


def test_simplex_span_and_bound_monte_carlo(basis10):
    rng = np.random.default_rng(5)
    v = basis10.components
    bound = np.sqrt(basis10.variances.max())
    for _ in range(10_000):
        s, a = sample_motion(basis10, rng, 1.0, return_weights=True)
        assert a.min() >= 0 and abs(a.sum() - 1.0) <= 1e-9
        resid = s - (s @ v.T) @ v
        assert np.linalg.norm(resid) <= 1e-6 * np.linalg.norm(s)
        assert np.linalg.norm(s) <= bound + 1e-12


def test_degenerate_basis_warns(caplog):
    b = MotionBasis(np.zeros(4), np.eye(4)[:2], np.zeros(2))
    with caplog.at_level(logging.WARNING):
        out = sample_motion(b, np.random.default_rng(0))
    assert not out.any() and "degenerate" in caplog.text


def test_out_of_bounds_motion_is_clamped():
    b = MotionBasis(np.zeros(2), np.array([[1.0, 0.0]]), np.array([1e6]))
    p = np.array([[5.0, 5.0]])
    v = draw_motion(p, b, np.random.default_rng(0), AugConfig(), (16, 32))
    q = p + v.reshape(1, 2)
    assert 0 <= q[0, 0] <= 31 and q[0, 1] == 5.0


def test_aug_config_validation():
    with pytest.raises(ValueError):
        AugConfig(prob=1.5)


# ---------------------------------------------------------------------------- synthesis

@pytest.fixture(scope="module")
def small_basis(small_model):
    rng = np.random.default_rng(3)
    return fit_basis(rng.normal(0, 1.0, (30, 2 * small_model.num_kp)), n=10)


def test_zero_motion_equals_identity_reconstruction(small_model, small_images):
    out = animate(small_images, small_model, np.zeros((len(small_images), 2 * small_model.num_kp)))
    assert np.array_equal(out, small_model.reconstruct_identity(small_images))


def test_zero_motion_delta_is_exactly_zero(small_model, small_images):
    from veinmt.posedet import grid_coords
    h, w = small_model.dense.map_shape
    xs, ys = grid_coords(h, w, small_model.dense.scale)
    with dc.no_grad():
        p, cov = small_model.detector(Array(small_images[:, None]))
        dh = dc.sub(dc.gaussian_heatmap(p, cov, h, w, xs, ys), dc.gaussian_heatmap(dc.add(p, 0.0), cov, h, w, xs, ys))
    assert not dh.data.any()


def test_augment_shape_range_and_determinism(small_model, small_images, small_basis):
    a = augment(small_images[0], small_model, small_basis, np.random.default_rng(9))
    b = augment(small_images[0], small_model, small_basis, np.random.default_rng(9))
    assert a.shape == SMALL and np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    with pytest.raises(dc.ShapeError):
        augment(np.zeros((8, 8)), small_model, small_basis, np.random.default_rng(0))


def test_augmentor_probability(small_model, small_images, small_basis):
    never = MTAugmentor(small_model, small_basis, AugConfig(prob=0.0))
    assert np.array_equal(never(small_images, np.random.default_rng(0)), small_images)
    always = MTAugmentor(small_model, small_basis, AugConfig(prob=1.0))
    out = always(small_images, np.random.default_rng(0))
    assert out.shape == small_images.shape and not np.array_equal(out, small_images)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_augment_never_leaves_unit_range(small_model, small_basis, seed):
    rng = np.random.default_rng(seed)
    out = augment(rng.random(SMALL), small_model, small_basis, rng)
    assert out.shape == SMALL and 0 <= out.min() and out.max() <= 1
