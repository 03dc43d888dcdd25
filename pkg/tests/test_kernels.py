"""Kernel backend parity and checkpoint round-trips."""

import numpy as np
import pytest

from a2d.autodiff import checkpoint
from a2d.autodiff.kernels import BACKEND, conv_py
from a2d.errors import CheckpointError

try:
    from a2d.autodiff.kernels import conv_cy
except ImportError:
    conv_cy = None

needs_ext = pytest.mark.skipif(conv_cy is None, reason="compiled kernels not built")

SHAPES = [
    ((2, 3, 12, 12), (8, 3, 3, 3), 2, 1),
    ((4, 8, 6, 6), (8, 8, 3, 3), 1, 1),
    ((4, 8, 6, 6), (16, 8, 5, 5), 2, 2),
    ((3, 8, 7, 5), (4, 8, 3, 3), 2, 1),  # non-square, odd sizes
    ((4, 8, 6, 6), (40, 8, 1, 1), 1, 0),  # pointwise
    ((2, 16, 3, 3), (16, 16, 3, 3), 1, 1),
]


@needs_ext
@pytest.mark.parametrize("xs,ws,stride,pad", SHAPES)
def test_conv_backend_parity(xs, ws, stride, pad):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(xs)
    w = rng.standard_normal(ws)
    y_py = conv_py.conv2d_forward(x, w, stride, pad)
    y_cy = conv_cy.conv2d_forward(x, w, stride, pad)
    np.testing.assert_allclose(y_py, y_cy, rtol=0, atol=1e-12)
    gy = rng.standard_normal(y_py.shape)
    np.testing.assert_allclose(
        conv_py.conv2d_backward_input(gy, w, xs, stride, pad),
        conv_cy.conv2d_backward_input(gy, w, xs, stride, pad),
        rtol=0,
        atol=1e-12,
    )
    np.testing.assert_allclose(
        conv_py.conv2d_backward_weight(gy, x, ws, stride, pad),
        conv_cy.conv2d_backward_weight(gy, x, ws, stride, pad),
        rtol=0,
        atol=1e-12,
    )


@needs_ext
@pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (5, 1), (5, 2)])
def test_depthwise_backend_parity(k, stride):
    rng = np.random.default_rng(1)
    xs = (3, 6, 8, 8)
    x = rng.standard_normal(xs)
    w = rng.standard_normal((6, k, k))
    pad = k // 2
    y_py = conv_py.depthwise_forward(x, w, stride, pad)
    y_cy = conv_cy.depthwise_forward(x, w, stride, pad)
    np.testing.assert_allclose(y_py, y_cy, rtol=0, atol=1e-12)
    gy = rng.standard_normal(y_py.shape)
    np.testing.assert_allclose(
        conv_py.depthwise_backward_input(gy, w, xs, stride, pad),
        conv_cy.depthwise_backward_input(gy, w, xs, stride, pad),
        rtol=0,
        atol=1e-12,
    )
    np.testing.assert_allclose(
        conv_py.depthwise_backward_weight(gy, x, w.shape, stride, pad),
        conv_cy.depthwise_backward_weight(gy, x, w.shape, stride, pad),
        rtol=0,
        atol=1e-12,
    )


def test_conv_forward_against_naive_loops():
    # independent oracle: literal loop nest over every kernel tap
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    stride, pad = 2, 1
    oh = ow = (5 + 2 * pad - 3) // stride + 1
    want = np.zeros((2, 4, oh, ow))
    for n in range(2):
        for co in range(4):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(3):
                        for kh in range(3):
                            for kw in range(3):
                                ih, iw = i * stride + kh - pad, j * stride + kw - pad
                                if 0 <= ih < 5 and 0 <= iw < 5:
                                    acc += x[n, ci, ih, iw] * w[co, ci, kh, kw]
                    want[n, co, i, j] = acc
    np.testing.assert_allclose(conv_py.conv2d_forward(x, w, stride, pad), want, atol=1e-12)
    if conv_cy is not None:
        np.testing.assert_allclose(conv_cy.conv2d_forward(x, w, stride, pad), want, atol=1e-12)


def test_backend_selection_reports_name():
    assert BACKEND in ("py", "cy")


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    params = {
        "backbone.stem.w": rng.standard_normal((8, 3, 3, 3)),
        "actor.out.b": rng.standard_normal(4),
        "scalar": np.array(3.14159),
    }
    meta = {"backbone": {"kind": "plain_conv"}, "note": "x"}
    path = tmp_path / "net.ckpt"
    checkpoint.save(path, params, meta=meta)
    loaded, got_meta = checkpoint.load(path)
    assert got_meta == meta
    assert set(loaded) == set(params)
    for k in params:
        assert loaded[k].shape == params[k].shape
        assert loaded[k].tobytes() == np.ascontiguousarray(params[k]).tobytes()


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(CheckpointError):
        checkpoint.load(path)
