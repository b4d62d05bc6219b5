import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from veinmt import diffcore as dc
from veinmt.diffcore import Array, kernels
from veinmt.diffcore.gradcheck import check_gradients

from .oracles import bilinear_oracle, conv2d_oracle


def arr(x, grad=False):
    return Array(np.asarray(x, dtype=np.float32), requires_grad=grad)


# ---------------------------------------------------------------------------- conv2d

def test_conv_box_sum_counts_neighbours():
    out = dc.conv2d(arr(np.ones((1, 1, 3, 3))), arr(np.ones((1, 1, 3, 3))), padding=1).data[0, 0]
    assert out[1, 1] == 9.0
    assert out[0, 0] == 4.0
    assert out[0, 1] == 6.0


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 2, 6, 7))
    k = np.zeros((2, 2, 3, 3))
    k[0, 0, 1, 1] = k[1, 1, 1, 1] = 1.0
    np.testing.assert_array_equal(dc.conv2d(arr(x), arr(k), padding="same").data, x.astype(np.float32))


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0), (2, 0)])
def test_conv_matches_nested_loop_oracle(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 2, 8, 8)).astype(np.float32)
    k = rng.normal(size=(4, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    got = dc.conv2d(arr(x), arr(k), arr(b), stride=stride, padding=pad).data
    np.testing.assert_allclose(got, conv2d_oracle(x, k, b, stride, pad), atol=1e-5)


def test_conv_output_size_formula():
    out = dc.conv2d(arr(np.zeros((1, 1, 9, 12))), arr(np.zeros((3, 1, 5, 5))), stride=2, padding=2)
    assert out.shape == (1, 3, (9 + 4 - 5) // 2 + 1, (12 + 4 - 5) // 2 + 1)


def test_conv_linearity():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(2, 1, 3, 6, 6))
    k = arr(rng.normal(size=(2, 3, 3, 3)))
    lhs = dc.conv2d(arr(2.5 * x - 0.5 * y), k, padding=1).data
    rhs = 2.5 * dc.conv2d(arr(x), k, padding=1).data - 0.5 * dc.conv2d(arr(y), k, padding=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


def test_conv_unbatched_input():
    x = np.random.default_rng(1).normal(size=(2, 5, 5))
    k = np.random.default_rng(2).normal(size=(3, 2, 3, 3))
    out = dc.conv2d(arr(x), arr(k), padding=1)
    assert out.shape == (3, 5, 5)
    np.testing.assert_allclose(out.data, conv2d_oracle(x[None], k, None, 1, 1)[0], atol=1e-5)


@pytest.mark.parametrize("xs,ks,kw,match", [
    ((1, 2, 5, 5), (3, 3, 3, 3), {}, "channels"),
    ((1, 2, 5, 5), (3, 2, 2, 2), {}, "odd"),
    ((1, 2, 5, 5), (3, 2, 3, 3), {"stride": 3}, "stride"),
])
def test_conv_shape_errors_name_the_dims(xs, ks, kw, match):
    with pytest.raises(dc.ShapeError, match=match):
        dc.conv2d(arr(np.zeros(xs)), arr(np.zeros(ks)), **kw)


# ---------------------------------------------------------------------------- grid_sample

def test_zero_flow_is_bit_exact_identity():
    x = np.random.default_rng(0).random((3, 2, 7, 9)).astype(np.float32)
    out = dc.grid_sample(arr(x), arr(np.zeros((3, 2, 7, 9))))
    assert np.array_equal(out.data, x)


def test_bilinear_midpoint():
    x = arr([[[[0.0, 1.0]]]])
    flow = np.zeros((1, 2, 1, 2))
    flow[0, 0, 0, 0] = 0.5
    assert dc.grid_sample(x, arr(flow)).data[0, 0, 0, 0] == pytest.approx(0.5)


def test_grid_sample_matches_per_pixel_oracle():
    rng = np.random.default_rng(5)
    x = rng.random((1, 1, 5, 5)).astype(np.float32)
    flow = rng.uniform(-1.5, 1.5, (1, 2, 5, 5)).astype(np.float32)
    np.testing.assert_allclose(dc.grid_sample(arr(x), arr(flow)).data, bilinear_oracle(x, flow), atol=1e-6)


def test_grid_sample_clamps_to_border():
    x = np.arange(6, dtype=np.float32).reshape(1, 1, 2, 3)
    flow = np.zeros((1, 2, 2, 3), np.float32)
    flow[:, 0] = 10.0
    out = dc.grid_sample(arr(x), arr(flow)).data
    np.testing.assert_array_equal(out[0, 0], [[2, 2, 2], [5, 5, 5]])


def test_grid_sample_rejects_nan_flow():
    flow = np.zeros((1, 2, 3, 3), np.float32)
    flow[0, 1, 1, 1] = np.nan
    with pytest.raises(FloatingPointError):
        dc.grid_sample(arr(np.ones((1, 1, 3, 3))), Array(flow))


@pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled kernels not built")
def test_backends_agree():
    rng = np.random.default_rng(9)
    x = rng.random((2, 3, 6, 8)).astype(np.float32)
    flow = rng.uniform(-3, 3, (2, 2, 6, 8)).astype(np.float32)
    g = rng.normal(size=x.shape).astype(np.float32)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    py, cy = kernels.BACKENDS["python"], kernels.BACKENDS["cython"]
    np.testing.assert_allclose(py.grid_sample_fwd(x, flow), cy.grid_sample_fwd(x, flow), atol=1e-6)
    for a, b in zip(py.grid_sample_bwd(x, flow, g), cy.grid_sample_bwd(x, flow, g)):
        np.testing.assert_allclose(a, b, atol=1e-5)
    np.testing.assert_array_equal(py.im2col(xp, 3, 2, 3, 4), cy.im2col(xp, 3, 2, 3, 4))
    cols = rng.normal(size=(27, 2 * 3 * 4)).astype(np.float32)
    np.testing.assert_allclose(py.col2im(cols, 2, 3, 8, 10, 3, 2, 3, 4),
                               cy.col2im(cols, 2, 3, 8, 10, 3, 2, 3, 4), atol=1e-6)


def test_backend_switch():
    before = kernels.BACKEND
    try:
        kernels.use("python")
        assert kernels.BACKEND == "python"
        with pytest.raises(ValueError):
            kernels.use("fortran")
    finally:
        kernels.use(before)


# ---------------------------------------------------------------------------- elementwise

def test_elementwise_values():
    assert dc.sigmoid(arr(0.0)).item() == 0.5
    np.testing.assert_array_equal(dc.relu(arr([-3.0, 3.0])).data, [0.0, 3.0])
    assert dc.elementwise("neg", arr([2.0])).data[0] == -2.0
    assert dc.elementwise("exp", arr([0.0])).data[0] == 1.0


def test_sigmoid_extremes_are_finite():
    out = dc.sigmoid(arr([-100.0, 100.0])).data
    assert np.isfinite(out).all() and out[0] < 1e-30 and out[1] == 1.0


def test_sigmoid_gradient_at_zero_against_finite_difference():
    x = arr([0.0], grad=True)
    dc.backward(dc.sum_(dc.sigmoid(x)))
    eps = 1e-3
    fd = (1 / (1 + np.exp(-eps)) - 1 / (1 + np.exp(eps))) / (2 * eps)
    assert x.grad[0] == pytest.approx(0.25, abs=1e-6)
    assert abs(x.grad[0] - fd) < 1e-4


def test_broadcasting_is_scalar_or_equal_shape_only():
    dc.add(arr(np.ones((2, 3))), 1.0)
    dc.mul(arr(np.ones((2, 3))), arr(2.0))
    with pytest.raises(dc.ShapeError):
        dc.add(arr(np.ones((2, 3))), arr(np.ones(3)))
    with pytest.raises(ValueError, match="tanh"):
        dc.elementwise("tanh", arr([1.0]))


# ---------------------------------------------------------------------------- resampling

def test_down2_of_constant_block():
    np.testing.assert_array_equal(dc.resample(arr(np.ones((1, 1, 2, 2))), "down2_avg").data, [[[[1.0]]]])


def test_up_then_down_keeps_constant():
    x = np.full((1, 2, 3, 4), 0.7, np.float32)
    out = dc.resample(dc.resample(arr(x), "up2_bilinear"), "down2_avg").data
    np.testing.assert_allclose(out, x, atol=1e-7)


def test_down2_preserves_mean():
    x = np.random.default_rng(1).random((2, 3, 6, 8)).astype(np.float32)
    assert dc.down2_avg(arr(x)).data.mean() == pytest.approx(x.mean(), abs=1e-6)


def test_down2_odd_dims_rejected():
    with pytest.raises(dc.ShapeError):
        dc.down2_avg(arr(np.zeros((1, 1, 3, 4))))


def test_up2_shape():
    assert dc.up2_bilinear(arr(np.zeros((2, 3, 4, 5)))).shape == (2, 3, 8, 10)


# ---------------------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = arr(np.zeros(4), grad=True)
    dc.backward(dc.sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones(4))


def test_backward_square():
    x = arr([1.0, 2.0], grad=True)
    dc.backward(dc.sum_(dc.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_accumulates_and_fans_out():
    x = arr([3.0], grad=True)
    dc.backward(dc.sum_(dc.add(x, x)))
    dc.backward(dc.sum_(dc.mul(x, 2.0)))
    np.testing.assert_array_equal(x.grad, [4.0])


def test_backward_rejects_non_scalar_and_reuse():
    x = arr([1.0, 2.0], grad=True)
    with pytest.raises(dc.ShapeError):
        dc.backward(dc.mul(x, 2.0))
    loss = dc.sum_(dc.mul(x, 2.0))
    dc.backward(loss)
    with pytest.raises(dc.GraphError):
        dc.backward(loss)


def test_zero_dim_inputs_keep_their_shape():
    x = arr(2.0, grad=True)
    dc.backward(dc.sum_(dc.mul(x, x)))
    assert x.grad.shape == () and x.grad == 4.0


def test_no_grad_records_nothing_and_is_thread_local():
    x = arr([1.0], grad=True)
    seen = {}

    def other():
        seen["enabled"] = dc.is_grad_enabled()

    with dc.no_grad():
        y = dc.mul(x, 2.0)
        t = threading.Thread(target=other)
        t.start()
        t.join()
    assert not y.requires_grad
    assert seen["enabled"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_results_are_errors():
    with pytest.raises(dc.NonFiniteError):
        dc.exp(arr([1000.0]))
    with pytest.raises(FloatingPointError):
        dc.log(arr([0.0]))


# ---------------------------------------------------------------------------- optimizer

def test_sgd_step_examples():
    p = arr([1.0])
    dc.sgd_step([p], [np.array([2.0], np.float32)], lr=0.01)
    assert p.data[0] == pytest.approx(0.98)
    q = arr([1.5])
    dc.sgd_step([q], [np.zeros(1, np.float32)], lr=0.1)
    assert q.data[0] == 1.5


def test_sgd_shape_mismatch():
    with pytest.raises(dc.ShapeError):
        dc.sgd_step([arr([1.0, 2.0])], [np.zeros(3, np.float32)], lr=0.1)


def test_sgd_converges_on_quadratic():
    p = arr([0.0], grad=True)
    opt = dc.SGD([p], lr=0.1, momentum=0.0)
    for _ in range(50):
        opt.zero_grad()
        d = dc.sub(p, 3.0)
        dc.backward(dc.sum_(dc.mul(d, d)))
        opt.step()
    assert abs(p.data[0] - 3.0) < 1e-3


def test_sgd_zero_lr_leaves_params_bit_identical():
    p = arr(np.random.default_rng(0).normal(size=5), grad=True)
    before = p.data.copy()
    p.grad = np.ones(5, np.float32)
    opt = dc.SGD([p], lr=0.0)
    opt.step()
    assert np.array_equal(p.data, before)
    with pytest.raises(ValueError):
        dc.SGD([p], lr=-1.0)


# ---------------------------------------------------------------------------- properties

@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_flow_within_bounds_stays_in_value_range(c, hh, ww, seed):
    rng = np.random.default_rng(seed)
    x = rng.random((1, c, 2 * hh, 2 * ww)).astype(np.float32)
    flow = rng.uniform(-5, 5, (1, 2, 2 * hh, 2 * ww)).astype(np.float32)
    out = dc.grid_sample(arr(x), arr(flow)).data
    assert out.min() >= x.min() - 1e-6 and out.max() <= x.max() + 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_identical_inputs_give_identical_outputs(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
    k = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    a = dc.conv2d(arr(x), arr(k), padding=1).data
    b = dc.conv2d(arr(x), arr(k), padding=1).data
    assert np.array_equal(a, b)


def _wrong_square(x):
    from veinmt.diffcore.array import make_node
    return make_node(x.data ** 2, (x,), lambda g: (g * x.data,), "wrong_square")


def test_check_gradients_detects_a_wrong_backward():
    x = arr(np.random.default_rng(0).normal(size=4), grad=True)
    assert max(check_gradients(lambda: _wrong_square(x), [x])) > 0.1
