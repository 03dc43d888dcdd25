"""Searchable cells: nine candidate operators per cell, the Gumbel-Softmax
relaxation over them, and the supernet / derived feature extractors.

A cell's output is the noise-weighted sum of all nine candidate outputs;
every candidate maps the cell's input shape to the same output shape
(asserted at build).  Each candidate owns its own weights.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ShapeError
from ..layers import Conv2d, Dense, InvertedResidual, Module, Relu, Sequential

CANDIDATE_OPS = (
    "conv3",
    "conv5",
    "ir3e1",
    "ir3e3",
    "ir3e5",
    "ir5e1",
    "ir5e3",
    "ir5e5",
    "skip",
)


class Identity(Module):
    def forward(self, x):
        return x


class ConvRelu(Module):
    def __init__(self, rng, cin, cout, kernel, stride):
        super().__init__()
        self.conv = self.add_module("conv", Conv2d(rng, cin, cout, kernel, stride))

    def forward(self, x):
        return ad.relu(self.conv.forward(x))


def build_candidate(rng, kind, cin, cout, stride) -> Module:
    if kind == "conv3":
        return ConvRelu(rng, cin, cout, 3, stride)
    if kind == "conv5":
        return ConvRelu(rng, cin, cout, 5, stride)
    if kind.startswith("ir"):
        kernel = int(kind[2])
        expansion = int(kind[4])
        return InvertedResidual(rng, cin, cout, kernel, expansion, stride)
    if kind == "skip":
        if stride == 1 and cin == cout:
            return Identity()
        return Conv2d(rng, cin, cout, 1, stride, bias=False)
    raise ValueError(f"unknown candidate op {kind!r}")


def gumbel_softmax(logits_row: Tensor, tau: float, rng) -> Tensor:
    """softmax((logits + g) / tau) with g ~ Gumbel(0, 1); differentiable in
    the logits for the sampled g."""
    if tau <= 0:
        raise ValueError(f"gumbel temperature must be positive, got {tau}")
    u = rng.random(logits_row.shape)
    g = -np.log(-np.log(np.clip(u, 1e-300, 1.0 - 1e-16)))
    scaled = ad.mul(ad.add(logits_row, Tensor(g)), 1.0 / tau)
    return ad.softmax(scaled, axis=0)


class ArchParams:
    """Search state: one row of operator logits per cell plus the Gumbel
    temperature and its annealing schedule."""

    def __init__(self, num_cells, tau0=5.0, anneal_factor=0.98, anneal_interval=1):
        self.logits = Tensor(np.zeros((num_cells, len(CANDIDATE_OPS))), requires_grad=True)
        self.tau = float(tau0)
        self.anneal_factor = float(anneal_factor)
        self.anneal_interval = int(anneal_interval)

    @property
    def num_cells(self):
        return self.logits.shape[0]

    def cell_weights(self, cell_idx, rng) -> Tensor:
        row = ad.index_select(self.logits, cell_idx)
        return gumbel_softmax(row, self.tau, rng)

    def probs(self) -> np.ndarray:
        """Noise-free softmax over each cell's logits."""
        z = self.logits.data - self.logits.data.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def anneal(self):
        self.tau *= self.anneal_factor


class Cell(Module):
    def __init__(self, rng, cin, cout, stride):
        super().__init__()
        self.cin, self.cout, self.stride = cin, cout, stride
        self.ops = [build_candidate(rng, kind, cin, cout, stride) for kind in CANDIDATE_OPS]
        for kind, op in zip(CANDIDATE_OPS, self.ops):
            self.add_module(kind, op)

    def assert_homogeneous(self, hw):
        probe = Tensor(np.zeros((1, self.cin, hw[0], hw[1])))
        with ad.no_grad():
            shapes = {op.forward(probe).shape for op in self.ops}
        if len(shapes) != 1:
            raise ShapeError("cell (candidate output shapes differ)", *shapes)

    def forward(self, x, weights: Tensor):
        """Weighted sum of all candidate outputs; weights is a length-9
        tensor (Gumbel-Softmax sample, or forced in tests/derivation)."""
        return ad.weighted_sum([op.forward(x) for op in self.ops], weights)


def cell_geometry(config, obs_shape):
    """[(cin, cout, stride, (h_in, w_in)), ...] for each searchable cell."""
    from ..agent import conv_out_hw

    c, h, w = obs_shape
    sc, sk, ss = config.stem
    hw = conv_out_hw((h, w), sk, ss)
    cin = sc
    cells = []
    for blocks, cout, first_stride in config.groups:
        for b in range(blocks):
            stride = first_stride if b == 0 else 1
            cells.append((cin, cout, stride, hw))
            hw = conv_out_hw(hw, 3, stride)
            cin = cout
    return cells, hw


class SupernetExtractor(Module):
    needs_rng = True

    def __init__(self, rng, config, obs_shape):
        super().__init__()
        geometry, final_hw = cell_geometry(config, obs_shape)
        sc, sk, ss = config.stem
        self.stem = self.add_module("stem", Conv2d(rng, obs_shape[0], sc, sk, ss))
        self.cells = []
        for i, (cin, cout, stride, hw) in enumerate(geometry):
            cell = Cell(rng, cin, cout, stride)
            cell.assert_homogeneous(hw)
            self.cells.append(cell)
            self.add_module(f"cell{i}", cell)
        flat = geometry[-1][1] * final_hw[0] * final_hw[1]
        self.head = self.add_module("head", Dense(rng, flat, config.feature_dim))
        self.arch = ArchParams(len(self.cells))

    def forward(self, x, rng):
        if rng is None:
            raise ValueError("supernet forward needs an rng for the Gumbel noise")
        h = ad.relu(self.stem.forward(x))
        for i, cell in enumerate(self.cells):
            h = cell.forward(h, self.arch.cell_weights(i, rng))
        return ad.relu(self.head.forward(h))


class DerivedExtractor(Module):
    """Fixed network assembled from one chosen candidate op per cell."""

    needs_rng = False

    def __init__(self, rng, config, obs_shape):
        super().__init__()
        geometry, final_hw = cell_geometry(config, obs_shape)
        if len(config.derived_ops) != len(geometry):
            raise ValueError(
                f"derived_ops has {len(config.derived_ops)} entries for {len(geometry)} cells"
            )
        sc, sk, ss = config.stem
        layers = [Conv2d(rng, obs_shape[0], sc, sk, ss), Relu()]
        for kind, (cin, cout, stride, _) in zip(config.derived_ops, geometry):
            layers.append(build_candidate(rng, kind, cin, cout, stride))
        self.body = self.add_module("body", Sequential(*layers))
        flat = geometry[-1][1] * final_hw[0] * final_hw[1]
        self.head = self.add_module("head", Dense(rng, flat, config.feature_dim))

    def forward(self, x):
        return ad.relu(self.head.forward(self.body.forward(x)))
