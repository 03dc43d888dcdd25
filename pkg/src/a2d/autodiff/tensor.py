"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op records its inputs and a gradient closure on the output tensor;
`backward` replays the closures in exact reverse creation order (a valid
topological order, since an op's output is always created after its
inputs).  Gradients accumulate until `zero_grad`.  No broadcasting beyond
scalar*tensor and the bias adds folded into `dense`/`conv2d`.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

from ..errors import ShapeError
from . import kernels

_seq_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_seq")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._seq = next(_seq_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        """Value-equal tensor with gradient flow severed (shares the buffer)."""
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.data.shape)
        return float(self.data.reshape(()))

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf."""
        if self.data.size != 1:
            raise ShapeError("backward (loss must be scalar)", self.data.shape)
        nodes = []
        seen = {id(self)}
        stack = [self]
        while stack:
            t = stack.pop()
            nodes.append(t)
            for p in t._parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        self._accumulate(np.ones_like(self.data))
        for t in nodes:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)


class Graph:
    """Read-only view of the recorded ops reachable from a tensor.

    Entries are (op_name, input_tensors, output_tensor) in recording order.
    """

    def __init__(self, root: Tensor):
        nodes = []
        seen = {id(root)}
        stack = [root]
        while stack:
            t = stack.pop()
            nodes.append(t)
            for p in t._parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda t: t._seq)
        self.ops = [(t._op, t._parents, t) for t in nodes if t._parents]

    def __len__(self):
        return len(self.ops)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _scalar_grad(t: Tensor, g):
    return np.asarray(np.sum(g), dtype=np.float64).reshape(t.data.shape)


# -- elementwise / binary ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError("add", a.shape, b.shape)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_scalar_grad(a, g) if a.shape != data.shape else g)
        if b.requires_grad:
            b._accumulate(_scalar_grad(b, g) if b.shape != data.shape else g)

    return _make(data, "add", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError("mul", a.shape, b.shape)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            ga = g * b.data
            a._accumulate(_scalar_grad(a, ga) if a.shape != data.shape else ga)
        if b.requires_grad:
            gb = g * a.data
            b._accumulate(_scalar_grad(b, gb) if b.shape != data.shape else gb)

    return _make(data, "mul", (a, b), backward)


def relu(x) -> Tensor:
    x = _wrap(x)
    data = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0.0))

    return _make(data, "relu", (x,), backward)


def log(x) -> Tensor:
    x = _wrap(x)
    data = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return _make(data, "log", (x,), backward)


def exp(x) -> Tensor:
    x = _wrap(x)
    data = np.exp(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * data)

    return _make(data, "exp", (x,), backward)


def square(x) -> Tensor:
    x = _wrap(x)
    data = x.data * x.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * 2.0 * x.data)

    return _make(data, "square", (x,), backward)


# -- reductions ----------------------------------------------------------


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = _wrap(x)
    data = np.sum(x.data, axis=axis)

    def backward(g):
        if x.requires_grad:
            if axis is None:
                x._accumulate(np.full_like(x.data, float(g)))
            else:
                x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make(data, "sum", (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = _wrap(x)
    data = np.mean(x.data, axis=axis)
    n = x.data.size if axis is None else x.shape[axis]

    def backward(g):
        if x.requires_grad:
            if axis is None:
                x._accumulate(np.full_like(x.data, float(g) / n))
            else:
                x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape) / n)

    return _make(data, "mean", (x,), backward)


def softmax(x, axis=-1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = np.sum(g * data, axis=axis, keepdims=True)
            x._accumulate(data * (g - dot))

    return _make(data, "softmax", (x,), backward)


# -- linear algebra ------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, "matmul", (a, b), backward)


def dense(x, w, b=None) -> Tensor:
    """x @ w + b; rank-4 inputs are flattened per row first."""
    x, w = _wrap(x), _wrap(w)
    x2 = x.data.reshape(x.shape[0], -1) if x.data.ndim == 4 else x.data
    if x2.ndim != 2 or x2.shape[1] != w.shape[0]:
        raise ShapeError("dense", x.shape, w.shape)
    data = x2 @ w.data
    if b is not None:
        b = _wrap(b)
        if b.shape != (w.shape[1],):
            raise ShapeError("dense (bias)", b.shape, w.shape)
        data = data + b.data

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            x._accumulate((g @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            w._accumulate(x2.T @ g)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _make(data, "dense", parents, backward)


# -- convolutions --------------------------------------------------------


def conv2d(x, w, b=None, stride=1, padding=0) -> Tensor:
    """2-D convolution; x (B,Cin,H,W), w (Cout,Cin,k,k), optional bias (Cout,)."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    k = w.shape[2]
    if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
        raise ShapeError("conv2d (spatial underflow)", x.shape, w.shape)
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    data = kernels.conv2d_forward(xd, wd, stride, padding)
    if b is not None:
        b = _wrap(b)
        if b.shape != (w.shape[0],):
            raise ShapeError("conv2d (bias)", b.shape, w.shape)
        data = data + b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accumulate(kernels.conv2d_backward_input(g, wd, x.shape, stride, padding))
        if w.requires_grad:
            w._accumulate(kernels.conv2d_backward_weight(g, xd, w.shape, stride, padding))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(data, "conv2d", parents, backward)


def depthwise_conv2d(x, w, stride=1, padding=0) -> Tensor:
    """Per-channel convolution; x (B,C,H,W), w (C,k,k)."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 4 or w.data.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ShapeError("depthwise_conv2d", x.shape, w.shape)
    k = w.shape[1]
    if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
        raise ShapeError("depthwise_conv2d (spatial underflow)", x.shape, w.shape)
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    data = kernels.depthwise_forward(xd, wd, stride, padding)

    def backward(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accumulate(kernels.depthwise_backward_input(g, wd, x.shape, stride, padding))
        if w.requires_grad:
            w._accumulate(kernels.depthwise_backward_weight(g, xd, w.shape, stride, padding))

    return _make(data, "depthwise_conv2d", (x, w), backward)


def global_avg_pool(x) -> Tensor:
    """(B,C,H,W) -> (B,C), spatial mean."""
    x = _wrap(x)
    if x.data.ndim != 4:
        raise ShapeError("global_avg_pool", x.shape)
    hw = x.shape[2] * x.shape[3]
    data = x.data.mean(axis=(2, 3))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g[:, :, None, None], x.shape) / hw)

    return _make(data, "global_avg_pool", (x,), backward)


def batch_norm2d(x, gamma, beta, eps=1e-5) -> Tensor:
    """Per-channel normalization using the batch statistics of x."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.data.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batch_norm2d", x.shape, gamma.shape)
    axes = (0, 2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate(np.sum(g * xhat, axis=axes))
        if beta.requires_grad:
            beta._accumulate(np.sum(g, axis=axes))
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            t1 = gxhat.mean(axis=axes, keepdims=True)
            t2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
            x._accumulate(inv * (gxhat - t1 - xhat * t2))

    return _make(data, "batch_norm2d", (x, gamma, beta), backward)


# -- shuffling -----------------------------------------------------------


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis % len(base)
        ):
            raise ShapeError("concat", tensors[0].shape, t.shape)
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        offset = 0
        for t in tensors:
            n = t.shape[axis]
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + n)
            if t.requires_grad:
                t._accumulate(g[tuple(sl)])
            offset += n

    return _make(data, "concat", tuple(tensors), backward)


def weighted_sum(tensors, weights) -> Tensor:
    """sum_i weights[i] * tensors[i] as one fused op (mixture layers record
    a single graph node instead of a mul/add chain per branch)."""
    weights = _wrap(weights)
    tensors = [_wrap(t) for t in tensors]
    if weights.data.ndim != 1 or len(tensors) != weights.shape[0]:
        raise ShapeError("weighted_sum", (len(tensors),), weights.shape)
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError("weighted_sum", tensors[0].shape, t.shape)
    wd = weights.data
    data = wd[0] * tensors[0].data
    for i in range(1, len(tensors)):
        data += wd[i] * tensors[i].data

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(wd[i] * g)
        if weights.requires_grad:
            gw = np.array([np.sum(g * t.data) for t in tensors])
            weights._accumulate(gw)

    return _make(data, "weighted_sum", (*tensors, weights), backward)


def index_select(x, index) -> Tensor:
    """Select along the leading axis (int index), or gather one column per
    row when x is 2-D and index is a length-B integer vector."""
    x = _wrap(x)
    if isinstance(index, (int, np.integer)):
        i = int(index)
        data = x.data[i]

        def backward(g):
            if x.requires_grad:
                full = np.zeros_like(x.data)
                full[i] = g
                x._accumulate(full)

        return _make(data, "index_select", (x,), backward)

    idx = np.asarray(index)
    if x.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != x.shape[0]:
        raise ShapeError("index_select", x.shape, idx.shape)
    rows = np.arange(x.shape[0])
    data = x.data[rows, idx]

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, (rows, idx), g)
            x._accumulate(full)

    return _make(data, "index_select", (x,), backward)
