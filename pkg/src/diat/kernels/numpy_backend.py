"""Pure-numpy convolution kernels (im2col based).

All functions operate on batched 4-d arrays (N, C, H, W) and are the
fallback backend when the compiled extension is unavailable.  Both
float32 and float64 inputs are supported; outputs keep the input dtype.
"""

import numpy as np

NAME = "numpy"


def _out_extent(size, k, pad, stride):
    return (size + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, pad, stride):
    """Return patch matrix of shape (N, C*kh*kw, Ho*Wo)."""
    n, c, h, w = x.shape
    ho = _out_extent(h, kh, pad, stride)
    wo = _out_extent(w, kw, pad, stride)
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(cols, n, c, h, w, kh, kw, pad, stride, ho, wo):
    """Adjoint of _im2col: scatter-add patches back to (N, C, H, W)."""
    hp, wp = h + 2 * pad, w + 2 * pad
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        i_max = i + stride * ho
        for j in range(kw):
            j_max = j + stride * wo
            out[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j]
    if pad > 0:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def conv2d_forward(x, w, b, pad, stride):
    """x: (N,Ci,H,W), w: (Co,Ci,kh,kw), b: (Co,) or None -> (N,Co,Ho,Wo)."""
    n = x.shape[0]
    co, ci, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, pad, stride)
    y = np.matmul(w.reshape(co, ci * kh * kw), cols)
    if b is not None:
        y += b.reshape(1, co, 1)
    return y.reshape(n, co, ho, wo)


def conv2d_input_grad(gy, w, pad, stride, h, w_in):
    """Gradient of conv2d w.r.t. its input, for an input of size (h, w_in)."""
    n, co, ho, wo = gy.shape
    co_w, ci, kh, kw = w.shape
    cols = np.matmul(
        w.reshape(co, ci * kh * kw).T, gy.reshape(n, co, ho * wo)
    )
    return _col2im(cols, n, ci, h, w_in, kh, kw, pad, stride, ho, wo)


def conv2d_weight_grad(x, gy, kh, kw, pad, stride):
    """Gradient of conv2d w.r.t. the weight, shape (Co,Ci,kh,kw)."""
    n, co, ho, wo = gy.shape
    ci = x.shape[1]
    cols, _, _ = _im2col(x, kh, kw, pad, stride)
    gw = np.matmul(gy.reshape(n, co, ho * wo), cols.transpose(0, 2, 1))
    return gw.sum(axis=0).reshape(co, ci, kh, kw)


def conv_transpose2d_forward(x, w, b, pad, stride, out_pad):
    """x: (N,Ci,H,W), w: (Ci,Co,kh,kw) -> (N,Co,Ho,Wo).

    Ho = (H-1)*stride + kh - 2*pad + out_pad.  Realized as the adjoint of
    conv2d_forward with the same geometry.
    """
    n, ci, h, w_in = x.shape
    ci_w, co, kh, kw = w.shape
    ho = (h - 1) * stride + kh - 2 * pad + out_pad
    wo = (w_in - 1) * stride + kw - 2 * pad + out_pad
    y = conv2d_input_grad(x, w, pad, stride, ho, wo)
    if b is not None:
        y += b.reshape(1, co, 1, 1)
    return y


def conv_transpose2d_input_grad(gy, w, pad, stride):
    """Gradient of conv_transpose2d w.r.t. its input."""
    return conv2d_forward(gy, w, None, pad, stride)


def conv_transpose2d_weight_grad(x, gy, kh, kw, pad, stride):
    """Gradient of conv_transpose2d w.r.t. the weight, shape (Ci,Co,kh,kw)."""
    return conv2d_weight_grad(gy, x, kh, kw, pad, stride)
