"""Parameterized layers on top of the autodiff tensors.

A Module owns named parameter tensors and submodules; `params()` walks the
tree and yields dotted parameter paths, which double as checkpoint keys.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def orthogonal(rng, shape, gain=1.0):
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


def fan_in_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class Module:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._mods: dict[str, Module] = {}

    def add_param(self, name, data) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def add_module(self, name, module):
        self._mods[name] = module
        return module

    def params(self, prefix="") -> dict[str, Tensor]:
        out = {}
        for name, t in self._params.items():
            out[prefix + name] = t
        for name, m in self._mods.items():
            out.update(m.params(prefix + name + "."))
        return out

    def param_count(self) -> int:
        return int(np.sum([t.size for t in self.params().values()]))

    def zero_grad(self):
        for t in self.params().values():
            t.zero_grad()

    def freeze(self):
        for t in self.params().values():
            t.requires_grad = False

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params().items()}

    def load_state_arrays(self, arrays):
        own = self.params()
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, t in own.items():
            if arrays[k].shape != t.data.shape:
                raise ValueError(f"{k}: shape {arrays[k].shape} != {t.data.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, kernel, stride=1, padding=None, bias=True):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.w = self.add_param(
            "w", fan_in_uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel)
        )
        self.b = self.add_param("b", np.zeros(cout)) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, rng, channels, kernel, stride=1):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2
        self.w = self.add_param(
            "w", fan_in_uniform(rng, (channels, kernel, kernel), kernel * kernel)
        )

    def forward(self, x):
        return ad.depthwise_conv2d(x, self.w, stride=self.stride, padding=self.padding)


class Dense(Module):
    def __init__(self, rng, fin, fout, init="fan_in", gain=1.0):
        super().__init__()
        if init == "orthogonal":
            w = orthogonal(rng, (fin, fout), gain=gain)
        else:
            w = fan_in_uniform(rng, (fin, fout), fin)
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(fout))

    def forward(self, x):
        return ad.dense(x, self.w, self.b)


class BatchNorm2d(Module):
    """Per-channel normalization over the batch statistics (no running
    averages at desk scale; evaluation uses batch stats too)."""

    def __init__(self, channels):
        super().__init__()
        self.gamma = self.add_param("gamma", np.ones(channels))
        self.beta = self.add_param("beta", np.zeros(channels))

    def forward(self, x):
        return ad.batch_norm2d(x, self.gamma, self.beta)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = layers
        for i, layer in enumerate(layers):
            self.add_module(str(i), layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x


class Relu(Module):
    def forward(self, x):
        return ad.relu(x)


class ResidualBlock(Module):
    """conv3x3(stride) - relu - conv3x3 plus a skip (1x1 projection when the
    shape changes), relu after the add."""

    def __init__(self, rng, cin, cout, stride=1, batch_norm=False):
        super().__init__()
        self.conv1 = self.add_module("conv1", Conv2d(rng, cin, cout, 3, stride))
        self.conv2 = self.add_module("conv2", Conv2d(rng, cout, cout, 3, 1))
        self.bn1 = self.add_module("bn1", BatchNorm2d(cout)) if batch_norm else None
        self.bn2 = self.add_module("bn2", BatchNorm2d(cout)) if batch_norm else None
        if stride != 1 or cin != cout:
            self.proj = self.add_module("proj", Conv2d(rng, cin, cout, 1, stride, bias=False))
        else:
            self.proj = None

    def forward(self, x):
        h = self.conv1.forward(x)
        if self.bn1 is not None:
            h = self.bn1.forward(h)
        h = ad.relu(h)
        h = self.conv2.forward(h)
        if self.bn2 is not None:
            h = self.bn2.forward(h)
        skip = x if self.proj is None else self.proj.forward(x)
        return ad.relu(ad.add(h, skip))


class InvertedResidual(Module):
    """1x1 expand -> depthwise kxk -> 1x1 linear project, with the residual
    add when shapes allow.  Expansion factor 1 skips the expand conv."""

    def __init__(self, rng, cin, cout, kernel, expansion, stride=1, batch_norm=False):
        super().__init__()
        hidden = cin * expansion
        self.expand = (
            self.add_module("expand", Conv2d(rng, cin, hidden, 1))
            if expansion != 1
            else None
        )
        self.dw = self.add_module("dw", DepthwiseConv2d(rng, hidden, kernel, stride))
        self.project = self.add_module("project", Conv2d(rng, hidden, cout, 1))
        self.bn = self.add_module("bn", BatchNorm2d(cout)) if batch_norm else None
        self.use_residual = stride == 1 and cin == cout

    def forward(self, x):
        h = x
        if self.expand is not None:
            h = ad.relu(self.expand.forward(h))
        h = ad.relu(self.dw.forward(h))
        h = self.project.forward(h)
        if self.bn is not None:
            h = self.bn.forward(h)
        if self.use_residual:
            h = ad.add(h, x)
        return h
