"""Actor-critic agents: feature extractor plus two light dense headers.

The feature extractor is one of: a plain conv stack ("tiny"), a residual
ladder (res-S/M/L), the architecture-search supernet, or a fixed network
derived from a finished search.  Headers are two dense layers each; the
hidden width equals the feature width.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, checkpoint
from .envs import EnvSpec
from .errors import ShapeError
from .layers import Conv2d, Dense, Module, Relu, ResidualBlock, Sequential


@dataclass(frozen=True)
class BackboneConfig:
    kind: str  # plain_conv | fixed_residual | supernet | derived
    stem: tuple = (8, 3, 2)  # (out_channels, kernel, stride)
    convs: tuple = ()  # plain_conv: ((channels, stride), ...)
    groups: tuple = ()  # residual/supernet/derived: ((blocks, channels, first_stride), ...)
    derived_ops: tuple = ()  # derived: one candidate-op name per cell
    feature_dim: int = 256
    batch_norm: bool = False

    def to_dict(self):
        return {
            "kind": self.kind,
            "stem": list(self.stem),
            "convs": [list(c) for c in self.convs],
            "groups": [list(g) for g in self.groups],
            "derived_ops": list(self.derived_ops),
            "feature_dim": self.feature_dim,
            "batch_norm": self.batch_norm,
        }

    @staticmethod
    def from_dict(d):
        return BackboneConfig(
            kind=d["kind"],
            stem=tuple(d.get("stem", (8, 3, 2))),
            convs=tuple(tuple(c) for c in d.get("convs", ())),
            groups=tuple(tuple(g) for g in d.get("groups", ())),
            derived_ops=tuple(d.get("derived_ops", ())),
            feature_dim=int(d.get("feature_dim", 256)),
            batch_norm=bool(d.get("batch_norm", False)),
        )


BACKBONE_PRESETS = {
    "tiny": BackboneConfig(kind="plain_conv", stem=(8, 3, 2), convs=((16, 2),)),
    "res-S": BackboneConfig(
        kind="fixed_residual", groups=((1, 8, 1), (1, 16, 2), (1, 32, 2))
    ),
    "res-M": BackboneConfig(
        kind="fixed_residual", groups=((2, 8, 1), (2, 16, 2), (2, 32, 2))
    ),
    "res-L": BackboneConfig(
        kind="fixed_residual", groups=((4, 8, 1), (4, 16, 2), (4, 32, 2))
    ),
    "supernet-6": BackboneConfig(kind="supernet", groups=((2, 8, 1), (2, 16, 2), (2, 32, 2))),
    "supernet-14": BackboneConfig(kind="supernet", groups=((5, 8, 1), (4, 16, 2), (5, 32, 2))),
}


def conv_out_hw(hw, kernel, stride):
    h, w = hw
    pad = kernel // 2
    oh = (h + 2 * pad - kernel) // stride + 1
    ow = (w + 2 * pad - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError("backbone (spatial underflow)", (h, w), (kernel, kernel))
    return oh, ow


def backbone_plan(config: BackboneConfig, obs_shape):
    """Static shape walk: [(cin, cout, stride, h_in, w_in), ...] per stage
    plus the flattened feature size entering the final dense layer."""
    c, h, w = obs_shape
    stages = []
    sc, sk, ss = config.stem
    stages.append(("stem", c, sc, sk, ss, (h, w)))
    hw = conv_out_hw((h, w), sk, ss)
    cin = sc
    if config.kind == "plain_conv":
        for cout, stride in config.convs:
            stages.append(("conv", cin, cout, 3, stride, hw))
            hw = conv_out_hw(hw, 3, stride)
            cin = cout
    else:
        for blocks, cout, first_stride in config.groups:
            for b in range(blocks):
                stride = first_stride if b == 0 else 1
                stages.append(("cell", cin, cout, 3, stride, hw))
                hw = conv_out_hw(hw, 3, stride)
                cin = cout
    return stages, cin * hw[0] * hw[1], hw


class PlainConvExtractor(Module):
    needs_rng = False

    def __init__(self, rng, config, obs_shape):
        super().__init__()
        _, flat, _ = backbone_plan(config, obs_shape)
        sc, sk, ss = config.stem
        layers = [Conv2d(rng, obs_shape[0], sc, sk, ss), Relu()]
        cin = sc
        for cout, stride in config.convs:
            layers += [Conv2d(rng, cin, cout, 3, stride), Relu()]
            cin = cout
        self.body = self.add_module("body", Sequential(*layers))
        self.head = self.add_module("head", Dense(rng, flat, config.feature_dim))

    def forward(self, x):
        return ad.relu(self.head.forward(self.body.forward(x)))


class ResidualExtractor(Module):
    needs_rng = False

    def __init__(self, rng, config, obs_shape):
        super().__init__()
        _, flat, _ = backbone_plan(config, obs_shape)
        sc, sk, ss = config.stem
        self.stem = self.add_module("stem", Conv2d(rng, obs_shape[0], sc, sk, ss))
        blocks = []
        cin = sc
        for blocks_n, cout, first_stride in config.groups:
            for b in range(blocks_n):
                stride = first_stride if b == 0 else 1
                blocks.append(ResidualBlock(rng, cin, cout, stride, config.batch_norm))
                cin = cout
        self.blocks = self.add_module("blocks", Sequential(*blocks))
        self.head = self.add_module("head", Dense(rng, flat, config.feature_dim))

    def forward(self, x):
        h = ad.relu(self.stem.forward(x))
        h = self.blocks.forward(h)
        return ad.relu(self.head.forward(h))


class Header(Module):
    """Two dense layers; orthogonal init, small gain on the actor output to
    keep the initial policy near-uniform."""

    def __init__(self, rng, feature_dim, out_dim, out_gain):
        super().__init__()
        self.h = self.add_module(
            "h", Dense(rng, feature_dim, feature_dim, init="orthogonal", gain=np.sqrt(2.0))
        )
        self.out = self.add_module(
            "out", Dense(rng, feature_dim, out_dim, init="orthogonal", gain=out_gain)
        )

    def forward(self, x):
        return self.out.forward(ad.relu(self.h.forward(x)))


class AgentNet(Module):
    def __init__(self, backbone, feature_dim, num_actions, rng):
        super().__init__()
        self.backbone = self.add_module("backbone", backbone)
        self.actor = self.add_module("actor", Header(rng, feature_dim, num_actions, 0.01))
        self.critic = self.add_module("critic", Header(rng, feature_dim, 1, 1.0))
        self.num_actions = num_actions

    def forward(self, obs, rng=None):
        """(actor logits (B,A), values (B,)) for an observation batch."""
        x = obs if isinstance(obs, Tensor) else Tensor(obs)
        if getattr(self.backbone, "needs_rng", False):
            feats = self.backbone.forward(x, rng)
        else:
            feats = self.backbone.forward(x)
        logits = self.actor.forward(feats)
        values = ad.mean(self.critic.forward(feats), axis=1)
        return logits, values


def build_agent(config: BackboneConfig, env_spec: EnvSpec, init_seed: int) -> AgentNet:
    rng = np.random.default_rng(init_seed)
    if config.kind == "plain_conv":
        backbone = PlainConvExtractor(rng, config, env_spec.obs_shape)
    elif config.kind == "fixed_residual":
        backbone = ResidualExtractor(rng, config, env_spec.obs_shape)
    elif config.kind in ("supernet", "derived"):
        from .nas.cells import DerivedExtractor, SupernetExtractor

        cls = SupernetExtractor if config.kind == "supernet" else DerivedExtractor
        backbone = cls(rng, config, env_spec.obs_shape)
    else:
        raise ValueError(f"unknown backbone kind {config.kind!r}")
    return AgentNet(backbone, config.feature_dim, env_spec.num_actions, rng)


def policy_and_value(net: AgentNet, obs_batch, rng=None):
    """Row-wise log-softmax action log-probs and scalar values."""
    logits, values = net.forward(obs_batch, rng=rng)
    log_probs = ad.log(ad.softmax(logits, axis=1))
    return log_probs, values


def action_log_probs(net: AgentNet, obs_batch, rng=None) -> np.ndarray:
    with ad.no_grad():
        log_probs, _ = policy_and_value(net, obs_batch, rng=rng)
    return log_probs.data


def sample_action(log_probs, rng) -> np.ndarray:
    """Categorical draw per row of a (B, A) log-prob array."""
    p = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    p = np.exp(p)
    cum = np.cumsum(p, axis=1)
    u = rng.random((p.shape[0], 1)) * cum[:, -1:]
    return np.minimum((cum < u).sum(axis=1), p.shape[1] - 1).astype(np.int64)


def save_agent(net: AgentNet, config: BackboneConfig, env_spec: EnvSpec, path):
    meta = {
        "backbone": config.to_dict(),
        "env": {
            "obs_shape": list(env_spec.obs_shape),
            "num_actions": env_spec.num_actions,
        },
    }
    checkpoint.save(path, net.state_arrays(), meta=meta)


def load_agent(path, env_spec: EnvSpec):
    arrays, meta = checkpoint.load(path)
    config = BackboneConfig.from_dict(meta["backbone"])
    saved_env = meta.get("env", {})
    if tuple(saved_env.get("obs_shape", env_spec.obs_shape)) != tuple(env_spec.obs_shape):
        raise ShapeError(
            "load_agent (observation space mismatch)",
            saved_env.get("obs_shape"),
            env_spec.obs_shape,
        )
    if saved_env.get("num_actions", env_spec.num_actions) != env_spec.num_actions:
        raise ValueError(
            f"checkpoint action space {saved_env.get('num_actions')} != env {env_spec.num_actions}"
        )
    net = build_agent(config, env_spec, init_seed=0)
    net.load_state_arrays(arrays)
    return net, config


def config_summary(config: BackboneConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)
