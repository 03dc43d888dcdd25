# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels.

The patch pack/unpack loops (the part numpy spends its time on at these
small shapes) run as branch-free C over zero-padded buffers; the channel
contraction itself goes through one BLAS GEMM.  Depthwise convolutions are
contraction-free and run as direct C loops.  Same contracts as conv_py.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef void _pack(double[:, :, :, ::1] xp, double[:, :, ::1] col,
                Py_ssize_t k, Py_ssize_t stride, Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    # col[b, i*ow+j, ((ci*k)+kh)*k+kw] = xp[b, ci, i*stride+kh, j*stride+kw]
    cdef Py_ssize_t b = xp.shape[0], cin = xp.shape[1]
    cdef Py_ssize_t n, ci, kh, kw, i, j, colidx
    for n in range(b):
        for ci in range(cin):
            for kh in range(k):
                for kw in range(k):
                    colidx = (ci * k + kh) * k + kw
                    for i in range(oh):
                        for j in range(ow):
                            col[n, i * ow + j, colidx] = xp[n, ci, i * stride + kh, j * stride + kw]


cdef void _unpack_add(double[:, :, ::1] t, double[:, :, :, ::1] gxp,
                      Py_ssize_t k, Py_ssize_t stride, Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    # gxp[b, ci, i*stride+kh, j*stride+kw] += t[b, i*ow+j, ((ci*k)+kh)*k+kw]
    cdef Py_ssize_t b = gxp.shape[0], cin = gxp.shape[1]
    cdef Py_ssize_t n, ci, kh, kw, i, j, colidx
    for n in range(b):
        for ci in range(cin):
            for kh in range(k):
                for kw in range(k):
                    colidx = (ci * k + kh) * k + kw
                    for i in range(oh):
                        for j in range(ow):
                            gxp[n, ci, i * stride + kh, j * stride + kw] += t[n, i * ow + j, colidx]


cdef object _padded(x_arr, Py_ssize_t pad):
    if pad == 0:
        return np.ascontiguousarray(x_arr)
    b, c, h, w = x_arr.shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:-pad, pad:-pad] = x_arr
    return xp


def conv2d_forward(x, w, int stride, int pad):
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t b = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - k) // stride + 1
    if k == 1 and pad == 0:
        xs = x[:, :, ::stride, ::stride] if stride > 1 else x
        y = np.tensordot(w[:, :, 0, 0], xs, axes=([1], [1]))
        return np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    xp = _padded(x, pad)
    col = np.empty((b, oh * ow, cin * k * k))
    _pack(xp, col, k, stride, oh, ow)
    y = col.reshape(b * oh * ow, -1) @ np.ascontiguousarray(w).reshape(cout, -1).T
    return np.ascontiguousarray(y.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2))


def conv2d_backward_input(gy, w, x_shape, int stride, int pad):
    cdef Py_ssize_t b = x_shape[0], cin = x_shape[1], h = x_shape[2], wd = x_shape[3]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    gy2 = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(b * oh * ow, cout)
    t = (gy2 @ np.ascontiguousarray(w).reshape(cout, -1)).reshape(b, oh * ow, cin * k * k)
    gxp = np.zeros((b, cin, h + 2 * pad, wd + 2 * pad))
    _unpack_add(t, gxp, k, stride, oh, ow)
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad:-pad, pad:-pad])
    return gxp


def conv2d_backward_weight(gy, x, w_shape, int stride, int pad):
    cdef Py_ssize_t cout = w_shape[0], cin = w_shape[1], k = w_shape[2]
    cdef Py_ssize_t b = x.shape[0]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    xp = _padded(x, pad)
    col = np.empty((b, oh * ow, cin * k * k))
    _pack(xp, col, k, stride, oh, ow)
    gy2 = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(b * oh * ow, cout)
    gw = gy2.T @ col.reshape(b * oh * ow, -1)
    return np.ascontiguousarray(gw.reshape(w_shape))


def depthwise_forward(x, w, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - k) // stride + 1
    cdef double[:, :, :, ::1] xp = _padded(x, pad)
    cdef double[:, :, ::1] wv = np.ascontiguousarray(w)
    y_arr = np.zeros((b, c, oh, ow))
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t n, ch, kh, kw, i, j
    cdef double wt
    with nogil:
        for n in range(b):
            for ch in range(c):
                for kh in range(k):
                    for kw in range(k):
                        wt = wv[ch, kh, kw]
                        for i in range(oh):
                            for j in range(ow):
                                y[n, ch, i, j] += wt * xp[n, ch, i * stride + kh, j * stride + kw]
    return y_arr


def depthwise_backward_input(gy, w, x_shape, int stride, int pad):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], wd = x_shape[3]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(gy)
    cdef double[:, :, ::1] wv = np.ascontiguousarray(w)
    gxp_arr = np.zeros((b, c, h + 2 * pad, wd + 2 * pad))
    cdef double[:, :, :, ::1] gxp = gxp_arr
    cdef Py_ssize_t n, ch, kh, kw, i, j
    cdef double wt
    with nogil:
        for n in range(b):
            for ch in range(c):
                for kh in range(k):
                    for kw in range(k):
                        wt = wv[ch, kh, kw]
                        for i in range(oh):
                            for j in range(ow):
                                gxp[n, ch, i * stride + kh, j * stride + kw] += wt * g[n, ch, i, j]
    if pad:
        return np.ascontiguousarray(gxp_arr[:, :, pad:-pad, pad:-pad])
    return gxp_arr


def depthwise_backward_weight(gy, x, w_shape, int stride, int pad):
    cdef Py_ssize_t c = w_shape[0], k = w_shape[1]
    cdef Py_ssize_t b = x.shape[0]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    cdef double[:, :, :, ::1] xp = _padded(x, pad)
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(gy)
    gw_arr = np.zeros((c, k, k))
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t n, ch, kh, kw, i, j
    cdef double acc
    with nogil:
        for ch in range(c):
            for kh in range(k):
                for kw in range(k):
                    acc = 0.0
                    for n in range(b):
                        for i in range(oh):
                            for j in range(ow):
                                acc += g[n, ch, i, j] * xp[n, ch, i * stride + kh, j * stride + kw]
                    gw[ch, kh, kw] = acc
    return gw_arr
