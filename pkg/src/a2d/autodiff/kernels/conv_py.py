"""Pure-numpy convolution kernels (im2col + BLAS).

Fallback backend used when the compiled extension is unavailable; also the
reference the compiled kernels are checked against.  Patch extraction runs
as k*k bulk slice copies, the contraction as one GEMM.  All arrays are
contiguous float64; weights are (C_out, C_in, k, k) for conv2d and
(C, k, k) for the depthwise variant.
"""

import numpy as np


def _out_hw(h, w, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def _pad(x, pad):
    if not pad:
        return x
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:-pad, pad:-pad] = x
    return xp


def _im2col(x, k, stride, pad, oh, ow):
    # (B, C, H, W) -> (B, oh, ow, C, k, k), one bulk copy per kernel tap
    b, c = x.shape[:2]
    xp = _pad(x, pad)
    col = np.empty((b, oh, ow, c, k, k))
    for kh in range(k):
        for kw in range(k):
            patch = xp[:, :, kh : kh + stride * oh : stride, kw : kw + stride * ow : stride]
            col[:, :, :, :, kh, kw] = patch.transpose(0, 2, 3, 1)
    return col


def conv2d_forward(x, w, stride, pad):
    cout, cin, k, _ = w.shape
    if k == 1 and pad == 0:  # pointwise: plain channel matmul
        xs = x[:, :, ::stride, ::stride] if stride > 1 else x
        y = np.tensordot(w[:, :, 0, 0], xs, axes=([1], [1]))
        return np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    b, _, h, wd = x.shape
    oh, ow = _out_hw(h, wd, k, stride, pad)
    col = _im2col(x, k, stride, pad, oh, ow)
    y = col.reshape(b * oh * ow, cin * k * k) @ w.reshape(cout, -1).T
    return np.ascontiguousarray(y.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2))


def conv2d_backward_input(gy, w, x_shape, stride, pad):
    b, cin, h, wd = x_shape
    cout, _, k, _ = w.shape
    oh, ow = gy.shape[2:]
    gy2 = gy.transpose(0, 2, 3, 1).reshape(b * oh * ow, cout)
    t = (gy2 @ w.reshape(cout, -1)).reshape(b, oh, ow, cin, k, k)
    gxp = np.zeros((b, cin, h + 2 * pad, wd + 2 * pad))
    for kh in range(k):
        for kw in range(k):
            gxp[:, :, kh : kh + stride * oh : stride, kw : kw + stride * ow : stride] += t[
                :, :, :, :, kh, kw
            ].transpose(0, 3, 1, 2)
    if pad:
        gxp = gxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gxp)


def conv2d_backward_weight(gy, x, w_shape, stride, pad):
    cout, cin, k, _ = w_shape
    b = x.shape[0]
    oh, ow = gy.shape[2:]
    col = _im2col(x, k, stride, pad, oh, ow)
    gy2 = gy.transpose(0, 2, 3, 1).reshape(b * oh * ow, cout)
    gw = gy2.T @ col.reshape(b * oh * ow, cin * k * k)
    return np.ascontiguousarray(gw.reshape(w_shape))


def depthwise_forward(x, w, stride, pad):
    b, c, h, wd = x.shape
    k = w.shape[1]
    oh, ow = _out_hw(h, wd, k, stride, pad)
    xp = _pad(x, pad)
    y = np.zeros((b, c, oh, ow))
    for kh in range(k):
        for kw in range(k):
            y += (
                xp[:, :, kh : kh + stride * oh : stride, kw : kw + stride * ow : stride]
                * w[None, :, kh, kw, None, None]
            )
    return y


def depthwise_backward_input(gy, w, x_shape, stride, pad):
    b, c, h, wd = x_shape
    k = w.shape[1]
    oh, ow = gy.shape[2:]
    gxp = np.zeros((b, c, h + 2 * pad, wd + 2 * pad))
    for kh in range(k):
        for kw in range(k):
            gxp[:, :, kh : kh + stride * oh : stride, kw : kw + stride * ow : stride] += (
                gy * w[None, :, kh, kw, None, None]
            )
    if pad:
        gxp = gxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gxp)


def depthwise_backward_weight(gy, x, w_shape, stride, pad):
    k = w_shape[1]
    oh, ow = gy.shape[2:]
    xp = _pad(x, pad)
    gw = np.zeros(w_shape)
    for kh in range(k):
        for kw in range(k):
            patch = xp[:, :, kh : kh + stride * oh : stride, kw : kw + stride * ow : stride]
            gw[:, kh, kw] = np.sum(gy * patch, axis=(0, 2, 3))
    return gw
