# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled convolution kernels.

Same interface and numerics as numpy_backend: im2col/col2im are tight C
loops here, the channel contraction stays in BLAS via np.matmul.
"""

import numpy as np

cimport cython
from libc.string cimport memcpy, memset

NAME = "cython"

ctypedef fused real:
    float
    double


cdef void _im2col_fill(real[:, :, :, ::1] x, real[:, :, ::1] cols,
                       int kh, int kw, int pad, int stride,
                       int ho, int wo) nogil:
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int b, ch, i, j, oy, ox, iy, ix, row, lo, hi
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            memset(&cols[b, row, oy * wo], 0,
                                   wo * sizeof(real))
                            continue
                        if stride == 1:
                            # source run x[b,ch,iy, j-pad+ox] is contiguous
                            lo = pad - j if pad > j else 0
                            hi = w - j + pad
                            if hi > wo:
                                hi = wo
                            if lo > 0:
                                memset(&cols[b, row, oy * wo], 0,
                                       lo * sizeof(real))
                            if hi > lo:
                                memcpy(&cols[b, row, oy * wo + lo],
                                       &x[b, ch, iy, lo + j - pad],
                                       (hi - lo) * sizeof(real))
                            if wo > hi:
                                memset(&cols[b, row, oy * wo + hi], 0,
                                       (wo - hi) * sizeof(real))
                        else:
                            for ox in range(wo):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= w:
                                    cols[b, row, oy * wo + ox] = 0.0
                                else:
                                    cols[b, row, oy * wo + ox] = x[b, ch, iy, ix]


cdef void _col2im_add(real[:, :, ::1] cols, real[:, :, :, ::1] out,
                      int kh, int kw, int pad, int stride,
                      int ho, int wo) nogil:
    cdef int n = out.shape[0], c = out.shape[1], h = out.shape[2], w = out.shape[3]
    cdef int b, ch, i, j, oy, ox, iy, ix, row
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(wo):
                            ix = ox * stride + j - pad
                            if 0 <= ix < w:
                                out[b, ch, iy, ix] += cols[b, row, oy * wo + ox]


cdef inline int _out_extent(int size, int k, int pad, int stride):
    return (size + 2 * pad - k) // stride + 1


def _im2col(x, int kh, int kw, int pad, int stride):
    x = np.ascontiguousarray(x)
    cdef int n = x.shape[0], c = x.shape[1]
    cdef int ho = _out_extent(x.shape[2], kh, pad, stride)
    cdef int wo = _out_extent(x.shape[3], kw, pad, stride)
    cols = np.empty((n, c * kh * kw, ho * wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col_fill[float](x, cols, kh, kw, pad, stride, ho, wo)
    elif x.dtype == np.float64:
        _im2col_fill[double](x, cols, kh, kw, pad, stride, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols, ho, wo


def _col2im(cols, int n, int c, int h, int w, int kh, int kw,
            int pad, int stride, int ho, int wo):
    cols = np.ascontiguousarray(cols)
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im_add[float](cols, out, kh, kw, pad, stride, ho, wo)
    elif cols.dtype == np.float64:
        _col2im_add[double](cols, out, kh, kw, pad, stride, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out


def conv2d_forward(x, w, b, pad, stride):
    n = x.shape[0]
    co, ci, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, pad, stride)
    y = np.matmul(w.reshape(co, ci * kh * kw), cols)
    if b is not None:
        y += b.reshape(1, co, 1)
    return y.reshape(n, co, ho, wo)


def conv2d_input_grad(gy, w, pad, stride, h, w_in):
    n, co, ho, wo = gy.shape
    co_w, ci, kh, kw = w.shape
    cols = np.matmul(w.reshape(co, ci * kh * kw).T,
                     np.ascontiguousarray(gy).reshape(n, co, ho * wo))
    return _col2im(cols, n, ci, h, w_in, kh, kw, pad, stride, ho, wo)


def conv2d_weight_grad(x, gy, kh, kw, pad, stride):
    n, co, ho, wo = gy.shape
    ci = x.shape[1]
    cols, _, _ = _im2col(x, kh, kw, pad, stride)
    gw = np.matmul(np.ascontiguousarray(gy).reshape(n, co, ho * wo),
                   cols.transpose(0, 2, 1))
    return gw.sum(axis=0).reshape(co, ci, kh, kw)


def conv_transpose2d_forward(x, w, b, pad, stride, out_pad):
    n, ci, h, w_in = x.shape
    ci_w, co, kh, kw = w.shape
    ho = (h - 1) * stride + kh - 2 * pad + out_pad
    wo = (w_in - 1) * stride + kw - 2 * pad + out_pad
    y = conv2d_input_grad(x, w, pad, stride, ho, wo)
    if b is not None:
        y += b.reshape(1, co, 1, 1)
    return y


def conv_transpose2d_input_grad(gy, w, pad, stride):
    return conv2d_forward(gy, w, None, pad, stride)


def conv_transpose2d_weight_grad(x, gy, kh, kw, pad, stride):
    return conv2d_weight_grad(gy, x, kh, kw, pad, stride)
