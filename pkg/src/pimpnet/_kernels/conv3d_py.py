"""Pure-numpy conv3d kernels, used when the compiled extension is absent.

The forward pass vectorizes over batch, output channel and output position
but walks input channels and kernel offsets in the same order as the compiled
kernel, so both produce bit-identical results.
"""
import numpy as np


def _out_extent(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _padded(x, padding):
    if padding == 0:
        return x
    pw = ((0, 0), (0, 0)) + ((padding, padding),) * 3
    return np.pad(x, pw)


def _window(xp, kd, kh, kw, stride, out_shape):
    Do, Ho, Wo = out_shape
    return xp[
        :,
        :,
        kd : kd + stride * (Do - 1) + 1 : stride,
        kh : kh + stride * (Ho - 1) + 1 : stride,
        kw : kw + stride * (Wo - 1) + 1 : stride,
    ]


def conv3d_forward(x, w, b, stride, padding):
    B, Cin, D, H, W = x.shape
    Cout, _, k = w.shape[:3]
    out_shape = tuple(_out_extent(n, k, stride, padding) for n in (D, H, W))
    xp = _padded(x.astype(np.float64), padding)
    w64 = w.astype(np.float64)
    acc = np.zeros((B, Cout) + out_shape, dtype=np.float64)
    for ci in range(Cin):
        for kd in range(k):
            for kh in range(k):
                for kw in range(k):
                    win = _window(xp[:, ci : ci + 1], kd, kh, kw, stride, out_shape)
                    acc += w64[None, :, ci, kd, kh, kw, None, None, None] * win
    acc += b.astype(np.float64)[None, :, None, None, None]
    return acc.astype(x.dtype)


def conv3d_backward_weight(x, g, k, stride, padding):
    B, Cin = x.shape[:2]
    Cout = g.shape[1]
    out_shape = g.shape[2:]
    xp = _padded(x.astype(np.float64), padding)
    g2 = g.reshape(B, Cout, -1)
    gw = np.zeros((Cout, Cin, k, k, k), dtype=np.float64)
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                win = _window(xp, kd, kh, kw, stride, out_shape).reshape(B, Cin, -1)
                gw[:, :, kd, kh, kw] = np.tensordot(g2, win, axes=([0, 2], [0, 2]))
    return gw


def conv3d_backward_input(w, g, D, H, W, stride, padding):
    B, Cout = g.shape[:2]
    out_shape = g.shape[2:]
    Cin, k = w.shape[1], w.shape[2]
    w64 = w.astype(np.float64)
    gxp = np.zeros((B, Cin, D + 2 * padding, H + 2 * padding, W + 2 * padding))
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                # (Cin, B, Do, Ho, Wo)
                contrib = np.tensordot(w64[:, :, kd, kh, kw], g, axes=([0], [1]))
                _window(gxp, kd, kh, kw, stride, out_shape)[...] += contrib.transpose(1, 0, 2, 3, 4)
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gxp)
