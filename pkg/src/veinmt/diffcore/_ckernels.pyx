# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels (float32). Mirrors ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floorf
from libc.string cimport memcpy

cnp.import_array()


def im2col(float[:, :, :, ::1] xp, int k, int stride, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    out_np = np.empty((c * k * k, n * ho * wo), dtype=np.float32)
    cdef float[:, ::1] out = out_np
    cdef float *src
    cdef float *dst
    cdef Py_ssize_t ci, ki, kj, ni, i, j, row
    with nogil:
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    dst = &out[row, 0]
                    for ni in range(n):
                        for i in range(ho):
                            src = &xp[ni, ci, i * stride + ki, kj]
                            if stride == 1:
                                memcpy(dst, src, wo * sizeof(float))
                            else:
                                for j in range(wo):
                                    dst[j] = src[j * stride]
                            dst += wo
    return out_np


def col2im(float[:, ::1] cols, int n, int c, int hp, int wp, int k, int stride, int ho, int wo):
    out_np = np.zeros((n, c, hp, wp), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_np
    cdef Py_ssize_t ci, ki, kj, ni, i, j, row, col
    with nogil:
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    col = 0
                    for ni in range(n):
                        for i in range(ho):
                            for j in range(wo):
                                out[ni, ci, i * stride + ki, j * stride + kj] += cols[row, col]
                                col += 1
    return out_np


cdef inline void _coords(float f, int size, float pos, int* i0, int* i1, float* wt, int* inside) nogil:
    cdef float s = pos + f
    inside[0] = 1
    if s < 0:
        s = 0
        inside[0] = 0
    elif s > size - 1:
        s = size - 1
        inside[0] = 0
    cdef float fl = floorf(s)
    i0[0] = <int>fl
    i1[0] = i0[0] + 1 if i0[0] + 1 < size else size - 1
    wt[0] = s - fl


def grid_sample_fwd(float[:, :, :, ::1] x, float[:, :, :, ::1] flow):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out_np = np.empty((n, c, h, w), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_np
    cdef Py_ssize_t ni, ci, i, j
    cdef int x0, x1, y0, y1, inx, iny
    cdef float wx, wy, top, bot
    with nogil:
        for ni in range(n):
            for i in range(h):
                for j in range(w):
                    _coords(flow[ni, 0, i, j], <int>w, <float>j, &x0, &x1, &wx, &inx)
                    _coords(flow[ni, 1, i, j], <int>h, <float>i, &y0, &y1, &wy, &iny)
                    for ci in range(c):
                        top = (1 - wx) * x[ni, ci, y0, x0] + wx * x[ni, ci, y0, x1]
                        bot = (1 - wx) * x[ni, ci, y1, x0] + wx * x[ni, ci, y1, x1]
                        out[ni, ci, i, j] = (1 - wy) * top + wy * bot
    return out_np


def grid_sample_bwd(float[:, :, :, ::1] x, float[:, :, :, ::1] flow, float[:, :, :, ::1] gout):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    gin_np = np.zeros((n, c, h, w), dtype=np.float32)
    gflow_np = np.zeros((n, 2, h, w), dtype=np.float32)
    cdef float[:, :, :, ::1] gin = gin_np
    cdef float[:, :, :, ::1] gflow = gflow_np
    cdef Py_ssize_t ni, ci, i, j
    cdef int x0, x1, y0, y1, inx, iny
    cdef float wx, wy, g, v00, v01, v10, v11, dx, dy
    with nogil:
        for ni in range(n):
            for i in range(h):
                for j in range(w):
                    _coords(flow[ni, 0, i, j], <int>w, <float>j, &x0, &x1, &wx, &inx)
                    _coords(flow[ni, 1, i, j], <int>h, <float>i, &y0, &y1, &wy, &iny)
                    dx = 0
                    dy = 0
                    for ci in range(c):
                        g = gout[ni, ci, i, j]
                        v00 = x[ni, ci, y0, x0]
                        v01 = x[ni, ci, y0, x1]
                        v10 = x[ni, ci, y1, x0]
                        v11 = x[ni, ci, y1, x1]
                        gin[ni, ci, y0, x0] += g * (1 - wx) * (1 - wy)
                        gin[ni, ci, y0, x1] += g * wx * (1 - wy)
                        gin[ni, ci, y1, x0] += g * (1 - wx) * wy
                        gin[ni, ci, y1, x1] += g * wx * wy
                        dx += g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10))
                        dy += g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01))
                    gflow[ni, 0, i, j] = dx * inx
                    gflow[ni, 1, i, j] = dy * iny
    return gin_np, gflow_np
