"""Pure-NumPy hot kernels. Same signatures as the compiled ``_ckernels``."""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp, k, stride, ho, wo):
    """(N, C, Hp, Wp) padded input -> (C*k*k, N*ho*wo) columns."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(c, k, k, n, ho, wo),
        strides=(sc, sh, sw, sn, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(c * k * k, n * ho * wo)


def col2im(cols, n, c, hp, wp, k, stride, ho, wo):
    """Adjoint of im2col: scatter-add columns back into a padded image."""
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(c, k, k, n, ho, wo)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + hspan:stride, kj:kj + wspan:stride] += cols6[:, ki, kj].transpose(1, 0, 2, 3)
    return out


def _sample_coords(flow, h, w):
    n = flow.shape[0]
    ys = np.arange(h, dtype=flow.dtype)[None, :, None]
    xs = np.arange(w, dtype=flow.dtype)[None, None, :]
    sx = xs + flow[:, 0]
    sy = ys + flow[:, 1]
    inx = (sx >= 0) & (sx <= w - 1)
    iny = (sy >= 0) & (sy <= h - 1)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    wx = (sx - x0).astype(flow.dtype)
    wy = (sy - y0).astype(flow.dtype)
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    assert x0.shape == (n, h, w)
    return x0, x1, y0, y1, wx, wy, inx, iny


def grid_sample_fwd(x, flow):
    """Bilinear backward warp: out[n,c,i,j] = x[n,c](i + fy, j + fx), border clamp."""
    n, c, h, w = x.shape
    x0, x1, y0, y1, wx, wy, _, _ = _sample_coords(flow, h, w)
    flat = x.reshape(n, c, h * w)

    def gather(yy, xx):
        idx = (yy * w + xx).reshape(n, 1, h * w)
        return np.take_along_axis(flat, np.broadcast_to(idx, (n, c, h * w)), axis=2).reshape(n, c, h, w)

    wx_ = wx[:, None]
    wy_ = wy[:, None]
    top = (1 - wx_) * gather(y0, x0) + wx_ * gather(y0, x1)
    bot = (1 - wx_) * gather(y1, x0) + wx_ * gather(y1, x1)
    return ((1 - wy_) * top + wy_ * bot).astype(x.dtype)


def grid_sample_bwd(x, flow, gout):
    """Gradients of grid_sample_fwd w.r.t. input and flow."""
    n, c, h, w = x.shape
    x0, x1, y0, y1, wx, wy, inx, iny = _sample_coords(flow, h, w)
    flat = x.reshape(n, c, h * w)
    hw = h * w
    base = (np.arange(n * c, dtype=np.intp) * hw).reshape(n, c, 1)

    def idx(yy, xx):
        return (yy * w + xx).reshape(n, 1, hw)

    i00, i01, i10, i11 = idx(y0, x0), idx(y0, x1), idx(y1, x0), idx(y1, x1)
    g = gout.reshape(n, c, hw)
    wxf = wx.reshape(n, 1, hw)
    wyf = wy.reshape(n, 1, hw)
    gin = np.zeros(n * c * hw, dtype=np.float64)
    for ii, wt in ((i00, (1 - wxf) * (1 - wyf)), (i01, wxf * (1 - wyf)),
                   (i10, (1 - wxf) * wyf), (i11, wxf * wyf)):
        gin += np.bincount((base + ii).reshape(-1), weights=(g * wt).reshape(-1), minlength=n * c * hw)

    def gather(ii):
        return np.take_along_axis(flat, np.broadcast_to(ii, (n, c, hw)), axis=2)

    v00, v01, v10, v11 = gather(i00), gather(i01), gather(i10), gather(i11)
    dx = ((1 - wyf) * (v01 - v00) + wyf * (v11 - v10)) * g
    dy = ((1 - wxf) * (v10 - v00) + wxf * (v11 - v01)) * g
    gflow = np.empty((n, 2, h, w), dtype=x.dtype)
    gflow[:, 0] = dx.sum(axis=1).reshape(n, h, w) * inx
    gflow[:, 1] = dy.sum(axis=1).reshape(n, h, w) * iny
    return gin.reshape(n, c, h, w).astype(x.dtype), gflow
