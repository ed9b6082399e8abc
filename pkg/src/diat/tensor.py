"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array (float32 for training, float64 for
gradient checking).  Operations record themselves on the innermost active
:class:`GradTape`; replaying the tape in reverse accumulates gradients
into ``.grad`` with summation across fan-out.  Without an active tape,
ops run forward-only.
"""

import math
from contextlib import contextmanager

import numpy as np

from . import kernels

_TAPE_STACK = []
_CHECK_FINITE = False


class ShapeError(ValueError):
    pass


def set_check_finite(flag):
    """Globally enable/disable NaN/Inf detection on op outputs."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


@contextmanager
def finite_checking():
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        yield
    finally:
        _CHECK_FINITE = prev


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense n-dimensional array (order <= 4), optionally grad-tracked."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != np.float64:
            arr = arr.astype(np.float32, copy=False)
        if arr.ndim > 4:
            raise ShapeError(f"tensor order {arr.ndim} > 4")
        if _CHECK_FINITE and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul_scalar(self, 1.0 / float(other))

    def reshape(self, *shape):
        return reshape(self, *shape)

    def flatten(self):
        return reshape(self, -1)


class GradTape:
    """Ordered record of operations; reverse replay populates gradients."""

    def __init__(self):
        self._ops = []
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def record(self, out, inputs, backward):
        self._ops.append((out, inputs, backward))

    def reset(self):
        self._ops.clear()
        self._consumed = False

    def backward(self, root):
        if self._consumed:
            raise RuntimeError("tape already consumed; call reset() to reuse")
        if root.size != 1:
            raise ShapeError("backward root must be scalar")
        if not any(out is root for out, _, _ in self._ops):
            raise ValueError("root was not recorded on this tape")
        root.grad = np.ones_like(root.data)
        for out, inputs, backward in reversed(self._ops):
            gout = out.grad
            if gout is None:
                continue
            grads = backward(gout)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
        self._consumed = True


def _result(data, inputs, backward):
    """Wrap an op output, recording it when grad flow is needed."""
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track, dtype=data.dtype)
    if track:
        tape.record(out, inputs, backward)
    return out


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape} (broadcasting unsupported)")


# ---------------------------------------------------------------------------
# elementwise algebra and reductions

def add(a, b):
    _check_same_shape(a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def add_scalar(a, s):
    return _result(a.data + a.data.dtype.type(s), (a,), lambda g: (g,))


def sub(a, b):
    _check_same_shape(a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same_shape(a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def mul_scalar(a, s):
    s = float(s)
    return _result(a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))


def square(a):
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a, lo, hi):
    mask = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def tsum(a):
    data = np.asarray(a.data.sum(), dtype=a.dtype)
    return _result(data, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a):
    n = a.size
    data = np.asarray(a.data.mean(), dtype=a.dtype)
    return _result(data, (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def frobenius_sq(a):
    data = np.asarray((a.data * a.data).sum(), dtype=a.dtype)
    return _result(data, (a,), lambda g: (2.0 * a.data * g,))


# ---------------------------------------------------------------------------
# activations

def relu(a):
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    mask = a.data > 0
    scale = np.where(mask, a.data.dtype.type(1), a.data.dtype.type(slope))
    return _result(a.data * scale, (a,), lambda g: (g * scale,))


def sigmoid(a):
    # split by sign so the exponent argument is always <= 0
    x = a.data
    pos = x >= 0
    e = np.exp(np.where(pos, -x, x))
    y = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = a.data.reshape(shape)
    orig = a.shape
    return _result(data, (a,), lambda g: (g.reshape(orig),))


def slice_channels(a, start, count):
    """Slice `count` channels starting at `start` along axis -3."""
    if a.ndim < 3:
        raise ShapeError(f"slice_channels needs a spatial tensor, got {a.shape}")
    c = a.shape[-3]
    if start < 0 or count < 1 or start + count > c:
        raise ShapeError(
            f"channel slice [{start}:{start + count}] out of range for {c} channels")
    data = np.ascontiguousarray(a.data[..., start:start + count, :, :])

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[..., start:start + count, :, :] = g
        return (full,)

    return _result(data, (a,), backward)


def concat(tensors, axis=0):
    if not tensors:
        raise ValueError("concat of empty list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _result(data, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# linear layers

def dense(x, w, b):
    """y = w @ x + b; x is (N,) or batched (B, N), w is (M, N), b is (M,)."""
    if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
        raise ShapeError(f"dense weight/bias shapes {w.shape}/{b.shape} invalid")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense input length {x.shape[-1]} != {w.shape[1]}")
    if x.ndim == 1:
        data = w.data @ x.data + b.data

        def backward(g):
            return (g @ w.data, np.outer(g, x.data), g)

    elif x.ndim == 2:
        data = x.data @ w.data.T + b.data

        def backward(g):
            return (g @ w.data, g.T @ x.data, g.sum(axis=0))

    else:
        raise ShapeError("dense input must be 1-d or 2-d")
    return _result(data, (x, w, b), backward)


# ---------------------------------------------------------------------------
# convolutions

def _as_batched(t):
    if t.ndim == 3:
        return t.data[None], True
    if t.ndim == 4:
        return t.data, False
    raise ShapeError(f"expected 3-d or 4-d image tensor, got {t.ndim}-d")


def conv2d(x, w, b, pad=0, stride=1):
    """2-d convolution; x (C,H,W) or (N,C,H,W), w (Co,Ci,kh,kw), b (Co,)."""
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    xd, squeeze = _as_batched(x)
    co, ci, kh, kw = w.shape
    if xd.shape[1] != ci:
        raise ShapeError(f"conv2d: input channels {xd.shape[1]} != weight C_in {ci}")
    if b.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({co},)")
    h, wi = xd.shape[2], xd.shape[3]
    if kh > h + 2 * pad or kw > wi + 2 * pad:
        raise ShapeError("conv2d: kernel larger than padded input")
    y = kernels.conv2d_forward(xd, w.data, b.data, pad, stride)

    def backward(g):
        if g.ndim == 3:
            g = g[None]
        gx = kernels.conv2d_input_grad(g, w.data, pad, stride, h, wi)
        gw = kernels.conv2d_weight_grad(xd, g, kh, kw, pad, stride)
        gb = g.sum(axis=(0, 2, 3))
        if squeeze:
            gx = gx[0]
        return (gx, gw, gb)

    return _result(y[0] if squeeze else y, (x, w, b), backward)


def conv_transpose2d(x, w, b, pad=0, stride=1, out_pad=0):
    """Transposed convolution; w (Ci,Co,kh,kw) maps Ci -> Co channels.

    Output extent is (H-1)*stride + kh - 2*pad + out_pad; the map is the
    adjoint of conv2d with the same geometry.
    """
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if not 0 <= out_pad < stride:
        raise ShapeError(f"out_pad {out_pad} must satisfy 0 <= out_pad < stride {stride}")
    xd, squeeze = _as_batched(x)
    ci, co, kh, kw = w.shape
    if xd.shape[1] != ci:
        raise ShapeError(f"conv_transpose2d: input channels {xd.shape[1]} != weight C_in {ci}")
    if b.shape != (co,):
        raise ShapeError(f"conv_transpose2d: bias shape {b.shape} != ({co},)")
    y = kernels.conv_transpose2d_forward(xd, w.data, b.data, pad, stride, out_pad)

    def backward(g):
        if g.ndim == 3:
            g = g[None]
        gx = kernels.conv_transpose2d_input_grad(g, w.data, pad, stride)
        gw = kernels.conv_transpose2d_weight_grad(xd, g, kh, kw, pad, stride)
        gb = g.sum(axis=(0, 2, 3))
        if squeeze:
            gx = gx[0]
        return (gx, gw, gb)

    return _result(y[0] if squeeze else y, (x, w, b), backward)


# ---------------------------------------------------------------------------
# normalization

def instance_norm(x, eps=1e-5):
    """Normalize each channel of each sample to zero mean / unit variance
    over its spatial extent."""
    xd, squeeze = _as_batched(x)
    mu = xd.mean(axis=(2, 3), keepdims=True)
    var = xd.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (xd - mu) * inv

    def backward(g):
        if g.ndim == 3:
            g = g[None]
        gm = g.mean(axis=(2, 3), keepdims=True)
        gym = (g * y).mean(axis=(2, 3), keepdims=True)
        gx = inv * (g - gm - y * gym)
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _result(y[0] if squeeze else y, (x,), backward)


# ---------------------------------------------------------------------------
# gaussian blur (reflect edges, renormalized sampled kernel)

def gaussian_kernel(sigma, dtype=np.float64):
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    r = int(math.ceil(3.0 * sigma))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    k /= k.sum()
    return k.astype(dtype), r


def _reflect_indices(n, r):
    idx = np.arange(-r, n + r)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


def _blur_axis(xd, k, r, axis):
    n = xd.shape[axis]
    idx = _reflect_indices(n, r)
    xp = np.take(xd, idx, axis=axis)
    xp = np.moveaxis(xp, axis, 0)
    out = np.zeros_like(np.moveaxis(xd, axis, 0))
    for i, kv in enumerate(k):
        out += kv * xp[i:i + n]
    return np.moveaxis(out, 0, axis)


def _blur_axis_adjoint(g, k, r, axis, n):
    idx = _reflect_indices(n, r)
    gm = np.moveaxis(g, axis, 0)
    gxp = np.zeros((n + 2 * r,) + gm.shape[1:], dtype=g.dtype)
    for i, kv in enumerate(k):
        gxp[i:i + n] += kv * gm
    gx = np.zeros((n,) + gm.shape[1:], dtype=g.dtype)
    np.add.at(gx, idx, gxp)
    return np.moveaxis(gx, 0, axis)


def gaussian_blur(x, sigma):
    """Separable Gaussian filter, radius ceil(3*sigma), reflect edges."""
    k, r = gaussian_kernel(sigma, dtype=x.dtype)
    xd, squeeze = _as_batched(x)
    h, w = xd.shape[2], xd.shape[3]
    y = _blur_axis(_blur_axis(xd, k, r, 2), k, r, 3)

    def backward(g):
        if g.ndim == 3:
            g = g[None]
        gx = _blur_axis_adjoint(_blur_axis_adjoint(g, k, r, 3, w), k, r, 2, h)
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _result(y[0] if squeeze else y, (x,), backward)


# ---------------------------------------------------------------------------
# gradient checking oracle

def grad_check(f, x, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    f must map a Tensor to a scalar Tensor; evaluation happens in float64.
    """
    base = x.data.astype(np.float64)
    x64 = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    with GradTape() as tape:
        y = f(x64)
    if y.size != 1:
        raise ShapeError("grad_check requires a scalar-valued function")
    tape.backward(y)
    analytic = (x64.grad if x64.grad is not None else np.zeros_like(base)).reshape(-1)

    flat = base.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(base, dtype=np.float64)).item()
        flat[i] = orig - eps
        fm = f(Tensor(base, dtype=np.float64)).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
