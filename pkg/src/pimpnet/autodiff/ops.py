"""Differentiable operations.

Only the operation set the network needs is provided. Binary elementwise ops
accept numpy-style broadcasting between their two operands; reductions and the
3D operations accumulate in float64 and round once to the storage dtype.
"""
import numpy as np

from .. import _kernels
from .tensor import Tensor, make_result


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(out, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_result(out, (a, b), bw)


def neg(a):
    return make_result(-a.data, (a,), lambda g: (-g,))


def log(a):
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a):
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def tanh(a):
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),))


def square(a):
    return make_result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,))


def power(a, exponent: int):
    """Integer power ``a ** exponent`` (exponent >= 1)."""
    if exponent < 1 or int(exponent) != exponent:
        raise ValueError("power supports positive integer exponents only")
    exponent = int(exponent)
    out = a.data**exponent

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return make_result(out, (a,), bw)


def absolute(a):
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * mask,))


def clamp(a, lo=None, hi=None):
    """Clip to ``[lo, hi]``; the gradient is zero where the bound is active."""
    out = np.clip(a.data, lo, hi)
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return make_result(out, (a,), lambda g: (g * mask,))


# ------------------------------------------------------------------- structure


def reshape(a, shape):
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tensors, bw)


def take_rows(a, index):
    """``a[i, index[i]]`` for a 2D tensor: gathers one column per row."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])
    out = a.data[rows, index]

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[rows, index] = g
        return (ga,)

    return make_result(out, (a,), bw)


# ------------------------------------------------------------------ reductions


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    out = a.data.astype(np.float64).sum(axis=axis, keepdims=keepdims).astype(a.data.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return make_result(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def matmul(a, b):
    """Matrix product of 1D/2D operands, accumulated in float64."""
    out = (a.data.astype(np.float64) @ b.data.astype(np.float64)).astype(a.data.dtype)

    def bw(g):
        g64 = g.astype(np.float64)
        A, Bm = a.data.astype(np.float64), b.data.astype(np.float64)
        if A.ndim == 1 and Bm.ndim == 2:
            ga, gb = Bm @ g64, np.outer(A, g64)
        elif A.ndim == 2 and Bm.ndim == 1:
            ga, gb = np.outer(g64, Bm), A.T @ g64
        else:
            ga, gb = g64 @ Bm.T, A.T @ g64
        return ga.astype(a.data.dtype), gb.astype(b.data.dtype)

    return make_result(out, (a, b), bw)


def log_softmax(a, axis=-1):
    x = a.data.astype(np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out64 = shifted - lse
    soft = np.exp(out64)

    def bw(g):
        g64 = g.astype(np.float64)
        return ((g64 - soft * g64.sum(axis=axis, keepdims=True)).astype(a.data.dtype),)

    return make_result(out64.astype(a.data.dtype), (a,), bw)


# ------------------------------------------------------------------ 3D network


def _as_batch(x):
    if x.ndim == 4:
        return x[None], True
    if x.ndim == 5:
        return x, False
    raise ValueError(f"expected a C x D x H x W volume or a batch of them, got shape {x.shape}")


def conv3d(x, kernel, bias, stride=1, padding=0):
    """3D cross-correlation of ``x`` (Cin x D x H x W, optionally batched).

    Each output is accumulated in float64 over input channels then kernel
    offsets, the bias is added last and the sum is rounded once.
    """
    xb, squeeze = _as_batch(x.data)
    w, b = kernel.data, bias.data
    if w.ndim != 5 or w.shape[2] != w.shape[3] or w.shape[3] != w.shape[4]:
        raise ValueError(f"kernel must be Cout x Cin x k x k x k, got {w.shape}")
    if xb.shape[1] != w.shape[1]:
        raise ValueError(f"conv3d shape mismatch: input has {xb.shape[1]} channels, kernel expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias must have shape ({w.shape[0]},), got {b.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    k = w.shape[2]
    D, H, W = xb.shape[2:]
    if any(n + 2 * padding < k for n in (D, H, W)):
        raise ValueError(f"kernel size {k} exceeds padded input extents {(D, H, W)} (padding {padding})")
    dtype = xb.dtype
    xb = np.ascontiguousarray(xb)
    w = np.ascontiguousarray(w.astype(dtype, copy=False))
    b = np.ascontiguousarray(b.astype(dtype, copy=False))
    out = _kernels.conv3d_forward(xb, w, b, stride, padding)

    def bw(g):
        gb5 = np.ascontiguousarray((g[None] if squeeze else g).astype(np.float64))
        gx = gw = gbias = None
        if x.requires_grad:
            gx = _kernels.conv3d_backward_input(w, gb5, D, H, W, stride, padding).astype(dtype)
            if squeeze:
                gx = gx[0]
        if kernel.requires_grad:
            gw = _kernels.conv3d_backward_weight(xb, gb5, k, stride, padding).astype(kernel.data.dtype)
        if bias.requires_grad:
            gbias = gb5.sum(axis=(0, 2, 3, 4)).astype(bias.data.dtype)
        return gx, gw, gbias

    return make_result(out[0] if squeeze else out, (x, kernel, bias), bw)


def global_maxpool3d(z):
    """Max over the spatial extents of every channel.

    Returns the scores (M, or B x M) and an integer array of argmax locations
    (M x 3, or B x M x 3). Ties go to the first maximizer in row-major order;
    the gradient flows only to that position.
    """
    zb, squeeze = _as_batch(z.data)
    Bn, M = zb.shape[:2]
    spatial = zb.shape[2:]
    if min(zb.shape) < 1:
        raise ValueError(f"all extents must be >= 1, got {zb.shape}")
    flat = zb.reshape(Bn, M, -1)
    idx = flat.argmax(axis=2)
    scores = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0]
    locs = np.stack(np.unravel_index(idx, spatial), axis=-1)

    def bw(g):
        gb = g[None] if squeeze else g
        gz = np.zeros_like(flat)
        np.put_along_axis(gz, idx[..., None], gb[..., None].astype(flat.dtype), axis=2)
        gz = gz.reshape(zb.shape)
        return (gz[0] if squeeze else gz,)

    out = make_result(scores[0] if squeeze else scores, (z,), bw)
    return out, (locs[0] if squeeze else locs)


def softmax_over_channels(z):
    """Softmax across the channel axis at every spatial location (max-subtracted)."""
    zb, squeeze = _as_batch(z.data)
    x = zb.astype(np.float64)
    e = np.exp(x - x.max(axis=1, keepdims=True))
    s64 = e / e.sum(axis=1, keepdims=True)
    s = s64.astype(zb.dtype)

    def bw(g):
        g64 = (g[None] if squeeze else g).astype(np.float64)
        gz = s64 * (g64 - (g64 * s64).sum(axis=1, keepdims=True))
        gz = gz.astype(zb.dtype)
        return (gz[0] if squeeze else gz,)

    return make_result(s[0] if squeeze else s, (z,), bw)


def slice_rows(a, start, stop):
    """Rows ``start:stop`` along the leading axis."""
    sl = slice(start, stop)

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return make_result(a.data[sl], (a,), bw)
