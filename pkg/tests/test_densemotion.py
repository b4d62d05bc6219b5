import numpy as np
import pytest

from veinmt import diffcore as dc
from veinmt.densemotion import DenseMotion, MotionDelta, coarse_flow, estimate, mix_flows
from veinmt.diffcore import Array

from .conftest import SMALL


def test_coarse_flow_repeats_displacement():
    out = coarse_flow(Array(np.array([[[2.0, -1.0]]], np.float32)), (2, 2)).data
    assert out.shape == (1, 1, 2, 2, 2)
    np.testing.assert_array_equal(out[0, 0, 0], np.full((2, 2), 2.0))
    np.testing.assert_array_equal(out[0, 0, 1], np.full((2, 2), -1.0))


def test_coarse_flow_random_exhaustive(rng):
    dp = rng.normal(size=(2, 3, 2)).astype(np.float32)
    out = coarse_flow(Array(dp), (5, 7)).data
    assert np.array_equal(out, np.broadcast_to(dp[..., None, None], out.shape))
    assert not coarse_flow(Array(np.zeros((1, 2, 2), np.float32)), (3, 3)).data.any()


def _masks(rng, n, k, h, w):
    return dc.softmax(Array(rng.normal(size=(n, k + 1, h, w)).astype(np.float32)), axis=1)


def test_mix_flows_matches_convex_combination_oracle(rng):
    n, k, h, w = 2, 3, 4, 5
    masks = _masks(rng, n, k, h, w)
    dp = rng.normal(0, 3, (n, k, 2)).astype(np.float32)
    flow = mix_flows(masks, Array(dp)).data
    m = masks.data
    for i in range(n):
        for y in range(h):
            for x in range(w):
                want = sum(m[i, j, y, x] * dp[i, j].astype(np.float64) for j in range(k))
                np.testing.assert_allclose(flow[i, :, y, x], want, atol=1e-6)
    bound = np.linalg.norm(dp, axis=-1).max(axis=1)
    assert (np.linalg.norm(flow, axis=1) <= bound[:, None, None] + 1e-5).all()


def test_one_hot_mask_selects_that_keypoint():
    m = np.zeros((1, 4, 3, 3), np.float32)
    m[0, 1] = 1.0
    dp = np.array([[[1, 1], [4, -2], [0, 3]]], np.float32)
    flow = mix_flows(Array(m), Array(dp)).data
    np.testing.assert_array_equal(flow[0, 0], np.full((3, 3), 4.0))
    np.testing.assert_array_equal(flow[0, 1], np.full((3, 3), -2.0))


def test_zero_delta_gives_exactly_zero_flow(rng):
    dm = DenseMotion(3, SMALL, rng=np.random.default_rng(0))
    h, w = dm.map_shape
    delta = MotionDelta(Array(np.zeros((2, 3, 2), np.float32)), Array(np.zeros((2, 3, h, w), np.float32)))
    out = dm(Array(rng.random((2, 1) + SMALL).astype(np.float32)), delta)
    assert not out.flow.data.any()
    np.testing.assert_allclose(out.masks.data.sum(axis=1), 1.0, atol=1e-5)
    assert ((out.inpaint.data >= 0) & (out.inpaint.data <= 1)).all()
    assert out.flow.shape == (2, 2) + SMALL and out.inpaint.shape == (2, 1) + SMALL


def test_flow_bound_on_network_output(rng):
    dm = DenseMotion(3, SMALL, rng=np.random.default_rng(1))
    h, w = dm.map_shape
    dp = rng.normal(0, 4, (1, 3, 2)).astype(np.float32)
    delta = MotionDelta(Array(dp), Array(rng.uniform(-1, 1, (1, 3, h, w)).astype(np.float32)))
    flow, inpaint = estimate(rng.random(SMALL), delta, dm)
    assert flow.shape == (2,) + SMALL and inpaint.shape == SMALL
    assert (np.linalg.norm(flow, axis=0) <= np.linalg.norm(dp[0], axis=-1).max() + 1e-4).all()


def test_shape_mismatch_is_an_error():
    dm = DenseMotion(3, SMALL, rng=np.random.default_rng(0))
    h, w = dm.map_shape
    delta = MotionDelta(Array(np.zeros((1, 2, 2), np.float32)), Array(np.zeros((1, 2, h, w), np.float32)))
    with pytest.raises(dc.ShapeError):
        dm(Array(np.zeros((1, 1) + SMALL, np.float32)), delta)
    with pytest.raises(dc.ShapeError):
        coarse_flow(Array(np.zeros((1, 2, 3), np.float32)), (2, 2))
