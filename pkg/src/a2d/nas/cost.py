"""FLOPs accounting: 2 x multiply-accumulates of every convolution and
dense layer, per single observation.  Bias adds, activations, and residual
adds are not counted.  Padded kernel taps count (the naive loop multiplies
the zeros), matching the counting oracle."""

from __future__ import annotations

import numpy as np

from ..agent import BackboneConfig, backbone_plan
from .cells import CANDIDATE_OPS


def _out_hw(hw, kernel, stride):
    pad = kernel // 2
    return (
        (hw[0] + 2 * pad - kernel) // stride + 1,
        (hw[1] + 2 * pad - kernel) // stride + 1,
    )


def conv_flops(cin, cout, kernel, stride, hw_in):
    oh, ow = _out_hw(hw_in, kernel, stride)
    return 2 * kernel * kernel * cin * cout * oh * ow


def depthwise_flops(channels, kernel, stride, hw_in):
    oh, ow = _out_hw(hw_in, kernel, stride)
    return 2 * kernel * kernel * channels * oh * ow


def dense_flops(fin, fout):
    return 2 * fin * fout


def candidate_op_flops(kind, cin, cout, stride, hw_in):
    if kind in ("conv3", "conv5"):
        return conv_flops(cin, cout, int(kind[-1]), stride, hw_in)
    if kind.startswith("ir"):
        kernel, expansion = int(kind[2]), int(kind[4])
        hidden = cin * expansion
        total = 0
        if expansion != 1:
            total += conv_flops(cin, hidden, 1, 1, hw_in)
        total += depthwise_flops(hidden, kernel, stride, hw_in)
        oh_ow = _out_hw(hw_in, kernel, stride)
        total += conv_flops(hidden, cout, 1, 1, oh_ow)
        return total
    if kind == "skip":
        if stride == 1 and cin == cout:
            return 0
        return conv_flops(cin, cout, 1, stride, hw_in)
    raise ValueError(f"unknown candidate op {kind!r}")


def cell_cost_table(config: BackboneConfig, obs_shape) -> np.ndarray:
    """FLOPs per (cell, candidate op)."""
    from .cells import cell_geometry

    geometry, _ = cell_geometry(config, obs_shape)
    table = np.zeros((len(geometry), len(CANDIDATE_OPS)))
    for i, (cin, cout, stride, hw) in enumerate(geometry):
        for j, kind in enumerate(CANDIDATE_OPS):
            table[i, j] = candidate_op_flops(kind, cin, cout, stride, hw)
    return table


def _headers_flops(feature_dim, num_actions):
    actor = dense_flops(feature_dim, feature_dim) + dense_flops(feature_dim, num_actions)
    critic = dense_flops(feature_dim, feature_dim) + dense_flops(feature_dim, 1)
    return actor + critic


def agent_flops(config: BackboneConfig, obs_shape, num_actions) -> int:
    """Full single-observation forward cost of a fixed (non-super) agent."""
    stages, flat, _ = backbone_plan(config, obs_shape)
    total = 0
    sc, sk, ss = config.stem
    total += conv_flops(obs_shape[0], sc, sk, ss, obs_shape[1:])

    if config.kind == "plain_conv":
        for _, cin, cout, k, stride, hw in stages[1:]:
            total += conv_flops(cin, cout, k, stride, hw)
    elif config.kind == "fixed_residual":
        for _, cin, cout, _, stride, hw in stages[1:]:
            total += conv_flops(cin, cout, 3, stride, hw)
            mid_hw = _out_hw(hw, 3, stride)
            total += conv_flops(cout, cout, 3, 1, mid_hw)
            if stride != 1 or cin != cout:
                total += conv_flops(cin, cout, 1, stride, hw)
    elif config.kind == "derived":
        from .cells import cell_geometry

        geometry, _ = cell_geometry(config, obs_shape)
        for kind, (cin, cout, stride, hw) in zip(config.derived_ops, geometry):
            total += candidate_op_flops(kind, cin, cout, stride, hw)
    else:
        raise ValueError(f"agent_flops needs a fixed architecture, got kind={config.kind!r}")

    total += dense_flops(flat, config.feature_dim)
    total += _headers_flops(config.feature_dim, num_actions)
    return int(total)


def supernet_expected_flops(config: BackboneConfig, obs_shape, probs) -> float:
    """Probability-weighted cell cost under the noise-free softmax probs."""
    table = cell_cost_table(config, obs_shape)
    return float(np.sum(table * probs))


def mflops(flops) -> float:
    return flops / 1e6
