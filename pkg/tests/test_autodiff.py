"""Autodiff core: op semantics, gradient oracle checks, graph behaviour."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from a2d import autodiff as ad
from a2d.autodiff import Tensor
from a2d.errors import ShapeError

from helpers import check_grads, leaf


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(a, Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, a.data)


def test_softmax_symmetry():
    out = ad.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_conv2d_center_of_ones():
    # 3x3 window of ones fully overlapping the padded 4x4 ones: 9 taps hit.
    x = Tensor(np.ones((1, 1, 4, 4)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    y = ad.conv2d(x, w, stride=1, padding=1)
    assert y.shape == (1, 1, 4, 4)
    assert y.data[0, 0, 1, 1] == 9.0
    # corner only overlaps a 2x2 block
    assert y.data[0, 0, 0, 0] == 4.0


def test_square_grad_analytic():
    x = Tensor(3.0, requires_grad=True)
    ad.square(x).backward()
    assert x.grad == pytest.approx(6.0)


def test_relu_grad_at_negative():
    x = Tensor(-1.0, requires_grad=True)
    ad.relu(x).backward()
    assert x.grad == 0.0


def test_mlp_grads_match_finite_differences():
    rng = np.random.default_rng(7)
    x = Tensor(rng.uniform(-1, 1, (4, 6)))
    w1, b1 = leaf(rng, (6, 8)), leaf(rng, (8,))
    w2, b2 = leaf(rng, (8, 8)), leaf(rng, (8,))
    w3, b3 = leaf(rng, (8, 3)), leaf(rng, (3,))

    def loss():
        h = ad.relu(ad.dense(x, w1, b1))
        h = ad.relu(ad.dense(h, w2, b2))
        return ad.mean(ad.square(ad.dense(h, w3, b3)))

    check_grads(loss, [w1, b1, w2, b2, w3, b3])


def test_conv_graph_grads_match_finite_differences():
    rng = np.random.default_rng(3)
    x = leaf(rng, (2, 3, 6, 6))
    w = leaf(rng, (4, 3, 3, 3))
    b = leaf(rng, (4,))
    dw = leaf(rng, (4, 3, 3))

    def loss():
        h = ad.relu(ad.conv2d(x, w, b, stride=2, padding=1))
        h = ad.depthwise_conv2d(h, dw, stride=1, padding=1)
        return ad.mean(ad.square(ad.global_avg_pool(h)))

    check_grads(loss, [x, w, b, dw])


def test_softmax_log_concat_index_grads():
    rng = np.random.default_rng(11)
    a = leaf(rng, (3, 4))
    b = leaf(rng, (2, 4))
    idx = np.array([0, 3, 1, 1, 2])

    def loss():
        cat = ad.concat([a, b], axis=0)
        logp = ad.log(ad.softmax(cat, axis=1))
        return ad.mean(ad.index_select(logp, idx))

    check_grads(loss, [a, b])


def test_batch_norm_grads_match_finite_differences():
    rng = np.random.default_rng(5)
    x = leaf(rng, (3, 2, 4, 4))
    gamma = leaf(rng, (2,), 0.5, 1.5)
    beta = leaf(rng, (2,))

    def loss():
        return ad.mean(ad.square(ad.batch_norm2d(x, gamma, beta)))

    check_grads(loss, [x, gamma, beta], tol=5e-4)


def test_detach_blocks_gradient():
    x = Tensor(4.0, requires_grad=True)
    y = ad.mul(x.detach(), x)  # d/dx should be x, not 2x
    y.backward()
    assert x.grad == pytest.approx(4.0)


def test_backward_through_detach_leaves_source_grad_absent():
    x = Tensor([2.0, 3.0], requires_grad=True)
    ad.sum(ad.square(x.detach())).backward()
    assert x.grad is None


def test_detach_preserves_data_bit_exactly():
    x = Tensor(np.linspace(-1, 1, 7), requires_grad=True)
    d = x.detach()
    assert d.data.tobytes() == x.data.tobytes()
    assert not d.requires_grad


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        ad.square(x).backward()


def test_grad_accumulates_until_zero_grad():
    x = Tensor(3.0, requires_grad=True)
    ad.square(x).backward()
    ad.square(x).backward()
    assert x.grad == pytest.approx(12.0)
    x.zero_grad()
    ad.square(x).backward()
    assert x.grad == pytest.approx(6.0)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError) as exc:
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    assert exc.value.op == "add"
    assert exc.value.shapes == ((2, 3), (3, 2))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_forward_and_backward_deterministic():
    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.uniform(-1, 1, (2, 3, 8, 8)))
        w = leaf(rng, (4, 3, 3, 3))
        loss = ad.mean(ad.square(ad.conv2d(x, w, stride=1, padding=1)))
        loss.backward()
        return loss.data.tobytes(), w.grad.tobytes()

    assert run() == run()


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 5),
    st.integers(2, 6),
    st.integers(0, 2**31 - 1),
)
def test_softmax_rows_sum_to_one(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-30, 30, (rows, cols)))
    s = ad.softmax(x, axis=1).data.sum(axis=1)
    np.testing.assert_allclose(s, 1.0, rtol=0, atol=1e-12)


def test_no_grad_suppresses_recording():
    x = Tensor(2.0, requires_grad=True)
    with ad.no_grad():
        y = ad.square(x)
    assert not y.requires_grad
    assert y._parents == ()


def test_graph_records_in_topological_order():
    x = Tensor(2.0, requires_grad=True)
    y = ad.square(x)
    z = ad.mul(y, ad.exp(x))
    g = ad.Graph(z)
    names = [op for op, _, _ in g.ops]
    assert names.index("square") < names.index("mul")
    assert names.index("exp") < names.index("mul")


def test_mean_sum_axis_grads():
    rng = np.random.default_rng(2)
    x = leaf(rng, (3, 5))

    def loss():
        return ad.sum(ad.square(ad.mean(x, axis=0)))

    check_grads(loss, [x])


def test_scalar_broadcast_mul_grad():
    rng = np.random.default_rng(9)
    s = leaf(rng, ())
    x = leaf(rng, (2, 3))

    def loss():
        return ad.sum(ad.mul(s, ad.square(x)))

    check_grads(loss, [s, x])
