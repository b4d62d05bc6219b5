"""Differentiable ops.

Layout conventions: images are (C, H, W) or batched (N, C, H, W); flow
fields are (N, 2, H, W) with channel 0 the x (column) displacement and
channel 1 the y (row) displacement, in pixels.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from .array import DTYPE, Array, ShapeError, as_array, make_node


def _batched(x: Array, what: str) -> tuple[Array, bool]:
    if x.ndim == 4:
        return x, False
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    raise ShapeError(f"{what}: expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


# --------------------------------------------------------------------------- conv

def conv2d(x: Array, weight: Array, bias: Array | None = None, stride: int = 1, padding: int | str = 0) -> Array:
    """2-D cross-correlation. ``padding="same"`` means ``k // 2``."""
    xb, squeeze = _batched(x, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (c_out, c_in, k, k), got shape {weight.shape}")
    n, c, h, w = xb.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: kernel c_in={ci} does not match input channels c={c}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    k = kh
    pad = k // 2 if padding == "same" else int(padding)
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < k or wp < k:
        raise ShapeError(f"conv2d: padded input {hp}x{wp} smaller than kernel {k}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({co},)")

    xp = np.pad(xb.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb.data
    cols = kernels.im2col(np.ascontiguousarray(xp), k, stride, ho, wo)
    w2 = weight.data.reshape(co, -1)
    out = (w2 @ cols).reshape(co, n, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None, None]
    out = out.transpose(1, 0, 2, 3)

    def back(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if xb.requires_grad:
            gcols = w2.T @ g2
            gxp = kernels.col2im(np.ascontiguousarray(gcols), n, c, hp, wp, k, stride, ho, wo)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    res = make_node(out, parents, back, "conv2d")
    return reshape(res, res.shape[1:]) if squeeze else res


# --------------------------------------------------------------------------- warping

def grid_sample(x: Array, flow: Array) -> Array:
    """Bilinear backward warp ``out(p) = x(p + flow(p))`` with clamp-to-edge."""
    xb, squeeze = _batched(x, "grid_sample")
    fb, _ = _batched(flow, "grid_sample(flow)")
    n, c, h, w = xb.shape
    if fb.shape != (n, 2, h, w):
        raise ShapeError(f"grid_sample: flow shape {fb.shape} does not match input {(n, 2, h, w)}")
    if not np.isfinite(fb.data).all():
        raise FloatingPointError("grid_sample: flow contains NaN/Inf")
    xd = np.ascontiguousarray(xb.data)
    fd = np.ascontiguousarray(fb.data)
    out = kernels.grid_sample_fwd(xd, fd)

    def back(g):
        gin, gflow = kernels.grid_sample_bwd(xd, fd, np.ascontiguousarray(g, dtype=DTYPE))
        return gin, gflow

    res = make_node(out, (xb, fb), back, "grid_sample")
    return reshape(res, res.shape[1:]) if squeeze else res


# --------------------------------------------------------------------------- elementwise

def _binary_operands(a, b, op: str) -> tuple[Array, Array]:
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape} (need equal shapes or a scalar)")
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=DTYPE).reshape(shape)


def _out_shape(a: Array, b: Array) -> tuple:
    return a.shape if a.size >= b.size and a.ndim >= b.ndim else b.shape


def add(a, b) -> Array:
    a, b = _binary_operands(a, b, "add")
    shape = _out_shape(a, b)
    out = (a.data + b.data).reshape(shape)
    return make_node(out, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)), "add")


def sub(a, b) -> Array:
    a, b = _binary_operands(a, b, "sub")
    shape = _out_shape(a, b)
    out = (a.data - b.data).reshape(shape)
    return make_node(out, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)), "sub")


def mul(a, b) -> Array:
    a, b = _binary_operands(a, b, "mul")
    shape = _out_shape(a, b)
    ad, bd = a.data, b.data
    out = (ad * bd).reshape(shape)

    def back(g):
        ga = _reduce_to((g * bd).reshape(shape), a.shape) if a.requires_grad else None
        gb = _reduce_to((g * ad).reshape(shape), b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), back, "mul")


def neg(a) -> Array:
    a = as_array(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(a) -> Array:
    a = as_array(a)
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(DTYPE)
    return make_node(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def relu(a) -> Array:
    a = as_array(a)
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Array:
    a = as_array(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Array:
    a = as_array(a)
    x = a.data
    if (x <= 0).any():
        raise FloatingPointError("log: non-positive input")
    return make_node(np.log(x), (a,), lambda g: (g / x,), "log")


def abs_(a) -> Array:
    a = as_array(a)
    sign = np.sign(a.data)
    return make_node(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


ELEMENTWISE = {
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": exp,
    "neg": neg,
    "add": add,
    "mul": mul,
    "sub": sub,
}


def elementwise(op: str, *inputs) -> Array:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; choose from {sorted(ELEMENTWISE)}") from None
    return fn(*inputs)


# --------------------------------------------------------------------------- resampling

def down2_avg(x: Array) -> Array:
    xb, squeeze = _batched(x, "down2_avg")
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise ShapeError(f"down2_avg: spatial dims must be even, got h={h}, w={w}")
    out = xb.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def back(g):
        gg = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * np.float32(0.25)
        return (gg,)

    res = make_node(out, (xb,), back, "down2_avg")
    return reshape(res, res.shape[1:]) if squeeze else res


def _up2_axis(d: np.ndarray, axis: int) -> np.ndarray:
    # half-pixel bilinear: out[2i] = .75 x[i] + .25 x[i-1], out[2i+1] = .75 x[i] + .25 x[i+1], edges clamped
    d = np.moveaxis(d, axis, -1)
    prev = np.concatenate([d[..., :1], d[..., :-1]], axis=-1)
    nxt = np.concatenate([d[..., 1:], d[..., -1:]], axis=-1)
    out = np.empty(d.shape[:-1] + (2 * d.shape[-1],), dtype=d.dtype)
    out[..., 0::2] = 0.75 * d + 0.25 * prev
    out[..., 1::2] = 0.75 * d + 0.25 * nxt
    return np.moveaxis(out, -1, axis)


def _up2_axis_T(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    ge, go = g[..., 0::2], g[..., 1::2]
    out = 0.75 * (ge + go)
    out[..., :-1] += 0.25 * ge[..., 1:]
    out[..., 0] += 0.25 * ge[..., 0]
    out[..., 1:] += 0.25 * go[..., :-1]
    out[..., -1] += 0.25 * go[..., -1]
    return np.moveaxis(out, -1, axis)


def up2_bilinear(x: Array) -> Array:
    xb, squeeze = _batched(x, "up2_bilinear")
    out = _up2_axis(_up2_axis(xb.data, 2), 3)

    def back(g):
        return (np.ascontiguousarray(_up2_axis_T(_up2_axis_T(g, 3), 2), dtype=DTYPE),)

    res = make_node(out, (xb,), back, "up2_bilinear")
    return reshape(res, res.shape[1:]) if squeeze else res


def resample(x: Array, mode: str) -> Array:
    if mode == "down2_avg":
        return down2_avg(x)
    if mode == "up2_bilinear":
        return up2_bilinear(x)
    raise ValueError(f"resample: unknown mode {mode!r}")


# --------------------------------------------------------------------------- shape / reduction

def reshape(x: Array, shape: Sequence[int]) -> Array:
    old = x.shape
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Array, axes: Sequence[int] | None = None) -> Array:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.asarray(x.data.transpose(axes), order="C")
    return make_node(out, (x,), lambda g: (np.asarray(g.transpose(inv), order="C"),), "transpose")


def expand(x: Array, shape: Sequence[int]) -> Array:
    """Explicit NumPy-style broadcast; backward sums over the broadcast axes."""
    shape = tuple(shape)
    try:
        out = np.array(np.broadcast_to(x.data, shape))
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {x.shape} to {shape}") from None
    src = x.shape
    lead = len(shape) - len(src)

    def back(g):
        axes = tuple(range(lead)) + tuple(lead + i for i, s in enumerate(src) if s == 1 and shape[lead + i] != 1)
        return (g.sum(axis=axes).reshape(src),) if axes else (g,)

    return make_node(out, (x,), back, "expand")


def sum_(x: Array, axis=None, keepdims: bool = False) -> Array:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=DTYPE)
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.array(np.broadcast_to(g, shape)),)

    return make_node(out, (x,), back, "sum")


def mean(x: Array, axis=None, keepdims: bool = False) -> Array:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(xs: Sequence[Array], axis: int = 0) -> Array:
    xs = [as_array(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def back(g):
        return tuple(np.ascontiguousarray(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis))
                     for i in range(len(xs)))

    return make_node(out, tuple(xs), back, "concat")


def slice_axis(x: Array, axis: int, start: int, stop: int) -> Array:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = np.ascontiguousarray(x.data[index])

    def back(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return make_node(out, (x,), back, "slice")


def matmul(a: Array, b: Array) -> Array:
    a, b = as_array(a), as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return make_node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def pick(x: Array, index: np.ndarray) -> Array:
    """``out[i] = x[i, index[i]]`` for a 2-D x."""
    if x.ndim != 2:
        raise ShapeError(f"pick: expected 2-D input, got {x.shape}")
    index = np.asarray(index, dtype=np.intp)
    rows = np.arange(x.shape[0])
    out = x.data[rows, index]

    def back(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        np.add.at(full, (rows, index), g)
        return (full,)

    return make_node(out, (x,), back, "pick")


def softmax(x: Array, axis: int = -1) -> Array:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), back, "softmax")


def normalized_sigmoid(x: Array, axes=(2, 3)) -> Array:
    """``sigmoid(x)`` rescaled to sum to 1 over ``axes``, fused for stability.

    Chaining sigmoid with a division by its sum overflows in backward once a
    map's logits are all very negative; evaluated in log space the result is a
    softmax of log-sigmoids and the gradient stays bounded.
    """
    z = x.data.astype(np.float64)
    logsig = -np.logaddexp(0.0, -z)
    m = logsig.max(axis=axes, keepdims=True)
    e = np.exp(logsig - m)
    out = e / e.sum(axis=axes, keepdims=True)
    one_minus_s = np.exp(-np.logaddexp(0.0, z))

    def back(g):
        g = g.astype(np.float64)
        return ((out * one_minus_s * (g - (g * out).sum(axis=axes, keepdims=True))).astype(DTYPE),)

    return make_node(out.astype(DTYPE), (x,), back, "normalized_sigmoid")


def log_softmax(x: Array, axis: int = -1) -> Array:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def back(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), back, "log_softmax")


def l2_normalize(x: Array, axis: int = -1, eps: float = 1e-12) -> Array:
    norm = np.sqrt((x.data.astype(np.float64) ** 2).sum(axis=axis, keepdims=True)).astype(DTYPE)
    norm = np.maximum(norm, eps)
    out = x.data / norm

    def back(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return make_node(out, (x,), back, "l2_normalize")


def group_norm(x: Array, groups: int, eps: float = 1e-5) -> Array:
    """Zero mean, unit variance per sample over each group of channels (no affine)."""
    n, c, h, w = x.shape
    if c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible into {groups} groups")
    xg = x.data.reshape(n, groups, -1).astype(np.float64)
    mu = xg.mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(xg.var(axis=2, keepdims=True) + eps)
    xhat = (xg - mu) * inv

    def back(g):
        gg = g.reshape(n, groups, -1).astype(np.float64)
        gx = inv * (gg - gg.mean(axis=2, keepdims=True) - xhat * (gg * xhat).mean(axis=2, keepdims=True))
        return (gx.reshape(x.shape).astype(DTYPE),)

    return make_node(xhat.reshape(x.shape).astype(DTYPE), (x,), back, "group_norm")

def batch_norm(x: Array, mean: np.ndarray | None = None, var: np.ndarray | None = None,
               eps: float = 1e-5) -> tuple[Array, np.ndarray, np.ndarray]:
    """Standardize (N, F) features per column (no affine).

    Batch statistics are used unless ``mean`` and ``var`` are given; the
    statistics actually applied are returned alongside the output.
    """
    if x.ndim != 2:
        raise ShapeError(f"batch_norm: expected (N, F), got {x.shape}")
    xd = x.data.astype(np.float64)
    fixed = mean is not None
    if not fixed:
        mean, var = xd.mean(axis=0), xd.var(axis=0)
    inv = 1.0 / np.sqrt(np.asarray(var, np.float64) + eps)
    xhat = (xd - mean) * inv

    def back(g):
        g = g.astype(np.float64)
        if fixed:
            return ((g * inv).astype(DTYPE),)
        gx = inv * (g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0))
        return (gx.astype(DTYPE),)

    return make_node(xhat.astype(DTYPE), (x,), back, "batch_norm"), np.asarray(mean), np.asarray(var)

# --------------------------------------------------------------------------- keypoint moments

def _coord_grids(h: int, w: int, xs=None, ys=None):
    xs = np.arange(w, dtype=DTYPE) if xs is None else np.asarray(xs, dtype=DTYPE)
    ys = np.arange(h, dtype=DTYPE) if ys is None else np.asarray(ys, dtype=DTYPE)
    if xs.shape != (w,) or ys.shape != (h,):
        raise ShapeError(f"coordinate vectors {xs.shape}, {ys.shape} do not match map size {(h, w)}")
    return xs, ys


def soft_argmax(act: Array, xs=None, ys=None) -> Array:
    """Expected (x, y) location under each normalized activation map.

    act: (N, K, H, W), nonnegative with positive mass per map.
    Returns (N, K, 2) in the coordinates given by ``xs`` (columns) and ``ys`` (rows).
    """
    if act.ndim != 4:
        raise ShapeError(f"soft_argmax: expected (N,K,H,W), got {act.shape}")
    h, w = act.shape[2:]
    xs, ys = (v.astype(np.float64) for v in _coord_grids(h, w, xs, ys))
    a = act.data.astype(np.float64)
    total = a.sum(axis=(2, 3))
    if (total <= 0).any():
        raise FloatingPointError("soft_argmax: activation map with zero mass")
    px = (a.sum(axis=2) * xs).sum(axis=2) / total
    py = (a.sum(axis=3) * ys).sum(axis=2) / total
    out = np.stack([px, py], axis=-1).astype(DTYPE)

    def back(g):
        gx = g[..., 0][..., None, None]
        gy = g[..., 1][..., None, None]
        ga = (gx * (xs[None, None, None, :] - px[..., None, None])
              + gy * (ys[None, None, :, None] - py[..., None, None])) / total[..., None, None]
        return (ga.astype(DTYPE),)

    return make_node(out, (act,), back, "soft_argmax")


def soft_covariance(act: Array, p: Array, eps: float = 0.0, xs=None, ys=None) -> Array:
    """Second moment of each normalized activation map about ``p``, plus ``eps * I``.

    act: (N, K, H, W); p: (N, K, 2). Returns (N, K, 2, 2).
    """
    if act.ndim != 4 or p.shape != act.shape[:2] + (2,):
        raise ShapeError(f"soft_covariance: act {act.shape} and p {p.shape} disagree")
    h, w = act.shape[2:]
    xs, ys = (v.astype(np.float64) for v in _coord_grids(h, w, xs, ys))
    a = act.data.astype(np.float64)
    total = a.sum(axis=(2, 3))
    if (total <= 0).any():
        raise FloatingPointError("soft_covariance: activation map with zero mass")
    wgt = a / total[..., None, None]
    pd = p.data.astype(np.float64)
    dx = xs[None, None, None, :] - pd[..., 0][..., None, None]
    dy = ys[None, None, :, None] - pd[..., 1][..., None, None]
    sxx = (wgt * dx * dx).sum(axis=(2, 3))
    sxy = (wgt * dx * dy).sum(axis=(2, 3))
    syy = (wgt * dy * dy).sum(axis=(2, 3))
    raw = np.stack([np.stack([sxx, sxy], -1), np.stack([sxy, syy], -1)], -2)
    out = raw + eps * np.eye(2)
    mx = (wgt * dx).sum(axis=(2, 3))
    my = (wgt * dy).sum(axis=(2, 3))

    def back(g):
        gxx = g[..., 0, 0][..., None, None]
        gxy = (g[..., 0, 1] + g[..., 1, 0])[..., None, None]
        gyy = g[..., 1, 1][..., None, None]
        quad = gxx * dx * dx + gxy * dx * dy + gyy * dy * dy
        ga = (quad - (g * raw).sum(axis=(2, 3))[..., None, None]) / total[..., None, None]
        gs = g + np.swapaxes(g, -1, -2)
        m = np.stack([mx, my], -1)
        gp = -np.einsum("nkab,nkb->nka", gs, m)
        return ga.astype(DTYPE), gp.astype(DTYPE)

    return make_node(out.astype(DTYPE), (act, p), back, "soft_covariance")


def gaussian_heatmap(p: Array, cov: Array, h: int, w: int, xs=None, ys=None) -> Array:
    """``exp(-0.5 (x - p)^T cov^-1 (x - p))`` on an h x w grid.

    p: (N, K, 2); cov: (N, K, 2, 2) positive definite. Returns (N, K, h, w).
    """
    if p.ndim != 3 or p.shape[-1] != 2 or cov.shape != p.shape + (2,):
        raise ShapeError(f"gaussian_heatmap: p {p.shape} and cov {cov.shape} disagree")
    xs, ys = _coord_grids(h, w, xs, ys)
    s = cov.data
    det = s[..., 0, 0] * s[..., 1, 1] - s[..., 0, 1] * s[..., 1, 0]
    if (det <= 0).any() or (s[..., 0, 0] <= 0).any():
        raise FloatingPointError("gaussian_heatmap: covariance not positive definite")
    inv = np.empty_like(s)
    inv[..., 0, 0] = s[..., 1, 1] / det
    inv[..., 1, 1] = s[..., 0, 0] / det
    inv[..., 0, 1] = -s[..., 0, 1] / det
    inv[..., 1, 0] = -s[..., 1, 0] / det
    dx = xs[None, None, None, :] - p.data[..., 0][..., None, None]
    dy = ys[None, None, :, None] - p.data[..., 1][..., None, None]
    i00 = inv[..., 0, 0][..., None, None]
    i01 = inv[..., 0, 1][..., None, None]
    i10 = inv[..., 1, 0][..., None, None]
    i11 = inv[..., 1, 1][..., None, None]
    q = i00 * dx * dx + (i01 + i10) * dx * dy + i11 * dy * dy
    out = np.exp(-0.5 * q).astype(DTYPE)

    def back(g):
        gh = g * out
        # dq/dcov_ab = -(inv^T d)_a (inv d)_b ; dq/dd = (inv + inv^T) d
        ux = i00 * dx + i10 * dy
        uy = i01 * dx + i11 * dy
        vx = i00 * dx + i01 * dy
        vy = i10 * dx + i11 * dy
        gp = np.stack([(0.5 * gh * (ux + vx)).sum(axis=(2, 3)), (0.5 * gh * (uy + vy)).sum(axis=(2, 3))], -1)
        gc = np.empty_like(s)
        gc[..., 0, 0] = (0.5 * gh * ux * vx).sum(axis=(2, 3))
        gc[..., 0, 1] = (0.5 * gh * ux * vy).sum(axis=(2, 3))
        gc[..., 1, 0] = (0.5 * gh * uy * vx).sum(axis=(2, 3))
        gc[..., 1, 1] = (0.5 * gh * uy * vy).sum(axis=(2, 3))
        return gp.astype(DTYPE), gc.astype(DTYPE)

    return make_node(out, (p, cov), back, "gaussian_heatmap")
