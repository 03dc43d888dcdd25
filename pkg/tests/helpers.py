"""Shared test oracles: central finite differences and small utilities."""

import numpy as np

from a2d.autodiff import Tensor


def finite_difference_grads(fn, tensors, h=1e-5):
    """Central-difference gradient of scalar fn() w.r.t. each tensor's data.

    fn must recompute the full forward pass from the tensors' current data;
    it is the independent oracle the autodiff path is checked against.
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            g[i] = (up - down) / (2 * h)
        grads.append(g.reshape(t.data.shape))
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grads(build_loss, tensors, h=1e-5, tol=1e-4):
    """Assert autodiff grads match central differences on the same graph.

    build_loss() -> scalar Tensor, reading the (possibly perturbed) data of
    `tensors`.  Returns the worst relative error observed.
    """
    for t in tensors:
        t.zero_grad()
    loss = build_loss()
    loss.backward()
    numeric = finite_difference_grads(lambda: build_loss().item(), tensors, h=h)
    worst = 0.0
    for t, num in zip(tensors, numeric):
        assert t.grad is not None, "missing grad after backward"
        worst = max(worst, max_rel_error(t.grad, num))
    assert worst < tol, f"gradient mismatch: max relative error {worst:.3e} >= {tol}"
    return worst


def leaf(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)
