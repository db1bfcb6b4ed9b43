# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv3d kernels.

Forward accumulation order per output element is fixed: input channel, then
kernel depth, row, column; bias is added last and the float64 accumulator is
rounded once to the storage dtype.
"""
import numpy as np
from cython cimport floating


cdef inline Py_ssize_t _lo(Py_ssize_t pad, Py_ssize_t k, Py_ssize_t stride) nogil:
    # smallest output index o with o*stride - pad + k >= 0
    cdef Py_ssize_t num = pad - k
    if num <= 0:
        return 0
    return (num + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t n_in, Py_ssize_t n_out, Py_ssize_t pad,
                           Py_ssize_t k, Py_ssize_t stride) nogil:
    # one past the largest output index o with o*stride - pad + k < n_in
    cdef Py_ssize_t num = n_in - 1 + pad - k
    if num < 0:
        return 0
    cdef Py_ssize_t h = num // stride + 1
    return h if h < n_out else n_out


def conv3d_forward(floating[:, :, :, :, ::1] x, floating[:, :, :, :, ::1] w,
                   floating[::1] b, Py_ssize_t stride, Py_ssize_t padding):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1]
    cdef Py_ssize_t D = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t Cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Do = (D + 2 * padding - k) // stride + 1
    cdef Py_ssize_t Ho = (H + 2 * padding - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * padding - k) // stride + 1
    acc_arr = np.zeros((Do, Ho, Wo), dtype=np.float64)
    cdef double[:, :, ::1] acc = acc_arr
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((B, Cout, Do, Ho, Wo), dtype=dtype)
    cdef floating[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, co, ci, kd, kh, kw, od, oh, ow, d0, d1, h0, h1, w0, w1
    cdef Py_ssize_t idd, ihh
    cdef double wv, bias
    with nogil:
        for bi in range(B):
            for co in range(Cout):
                acc[:, :, :] = 0.0
                for ci in range(Cin):
                    for kd in range(k):
                        d0 = _lo(padding, kd, stride)
                        d1 = _hi(D, Do, padding, kd, stride)
                        for kh in range(k):
                            h0 = _lo(padding, kh, stride)
                            h1 = _hi(H, Ho, padding, kh, stride)
                            for kw in range(k):
                                w0 = _lo(padding, kw, stride)
                                w1 = _hi(W, Wo, padding, kw, stride)
                                wv = <double>w[co, ci, kd, kh, kw]
                                for od in range(d0, d1):
                                    idd = od * stride - padding + kd
                                    for oh in range(h0, h1):
                                        ihh = oh * stride - padding + kh
                                        for ow in range(w0, w1):
                                            acc[od, oh, ow] += wv * <double>x[bi, ci, idd, ihh, ow * stride - padding + kw]
                bias = <double>b[co]
                for od in range(Do):
                    for oh in range(Ho):
                        for ow in range(Wo):
                            out[bi, co, od, oh, ow] = <floating>(acc[od, oh, ow] + bias)
    return out_arr


def conv3d_backward_weight(floating[:, :, :, :, ::1] x, double[:, :, :, :, ::1] g,
                           Py_ssize_t k, Py_ssize_t stride, Py_ssize_t padding):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1]
    cdef Py_ssize_t D = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t Cout = g.shape[1], Do = g.shape[2], Ho = g.shape[3], Wo = g.shape[4]
    gw_arr = np.zeros((Cout, Cin, k, k, k), dtype=np.float64)
    cdef double[:, :, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t bi, co, ci, kd, kh, kw, od, oh, ow, d0, d1, h0, h1, w0, w1
    cdef Py_ssize_t idd, ihh
    cdef double s
    with nogil:
        for co in range(Cout):
            for ci in range(Cin):
                for kd in range(k):
                    d0 = _lo(padding, kd, stride)
                    d1 = _hi(D, Do, padding, kd, stride)
                    for kh in range(k):
                        h0 = _lo(padding, kh, stride)
                        h1 = _hi(H, Ho, padding, kh, stride)
                        for kw in range(k):
                            w0 = _lo(padding, kw, stride)
                            w1 = _hi(W, Wo, padding, kw, stride)
                            s = 0.0
                            for bi in range(B):
                                for od in range(d0, d1):
                                    idd = od * stride - padding + kd
                                    for oh in range(h0, h1):
                                        ihh = oh * stride - padding + kh
                                        for ow in range(w0, w1):
                                            s += g[bi, co, od, oh, ow] * <double>x[bi, ci, idd, ihh, ow * stride - padding + kw]
                            gw[co, ci, kd, kh, kw] = s
    return gw_arr


def conv3d_backward_input(floating[:, :, :, :, ::1] w, double[:, :, :, :, ::1] g,
                          Py_ssize_t D, Py_ssize_t H, Py_ssize_t W,
                          Py_ssize_t stride, Py_ssize_t padding):
    cdef Py_ssize_t B = g.shape[0], Cout = g.shape[1]
    cdef Py_ssize_t Do = g.shape[2], Ho = g.shape[3], Wo = g.shape[4]
    cdef Py_ssize_t Cin = w.shape[1], k = w.shape[2]
    gx_arr = np.zeros((B, Cin, D, H, W), dtype=np.float64)
    cdef double[:, :, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t bi, co, ci, kd, kh, kw, od, oh, ow, d0, d1, h0, h1, w0, w1
    cdef Py_ssize_t idd, ihh
    cdef double wv
    with nogil:
        for bi in range(B):
            for co in range(Cout):
                for ci in range(Cin):
                    for kd in range(k):
                        d0 = _lo(padding, kd, stride)
                        d1 = _hi(D, Do, padding, kd, stride)
                        for kh in range(k):
                            h0 = _lo(padding, kh, stride)
                            h1 = _hi(H, Ho, padding, kh, stride)
                            for kw in range(k):
                                w0 = _lo(padding, kw, stride)
                                w1 = _hi(W, Wo, padding, kw, stride)
                                wv = <double>w[co, ci, kd, kh, kw]
                                for od in range(d0, d1):
                                    idd = od * stride - padding + kd
                                    for oh in range(h0, h1):
                                        ihh = oh * stride - padding + kh
                                        for ow in range(w0, w1):
                                            gx[bi, ci, idd, ihh, ow * stride - padding + kw] += wv * g[bi, co, od, oh, ow]
    return gx_arr
