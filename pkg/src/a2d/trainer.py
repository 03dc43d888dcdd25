"""A2C training: rollout collection, one-step td-error losses, RMSProp
with a constant-then-linear learning-rate schedule, and evaluation with
null-op starts.

Per update, W parallel environments each contribute a segment of at most L
steps (ending early at a terminal); the policy loss weights the score
function by the detached td-error, the value loss regresses each value on
its detached one-step td target, and the entropy term is signed so that
minimizing the total loss increases entropy.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .agent import AgentNet, sample_action
from .autodiff import Tensor
from .errors import ConfigError, NonFiniteGradientError


@dataclass
class TrainConfig:
    total_steps: int = 50_000
    rollout_length: int = 5
    discount: float = 0.99
    entropy_coef: float = 1e-2
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-5
    grad_clip: float = 0.5  # global norm; 0 disables
    num_envs: int = 8
    eval_episodes: int = 30
    eval_interval: int = 2_000
    null_op_max: int = 30
    checkpoint_interval: int = 0  # env steps; 0 = final checkpoint only
    workers: int = 1
    seed: int = 0

    def validate(self):
        problems = []
        if not 0.0 < self.discount < 1.0:
            problems.append(f"train.discount must lie in (0,1), got {self.discount}")
        if self.rollout_length < 1:
            problems.append(f"train.rollout_length must be >= 1, got {self.rollout_length}")
        if self.lr_initial <= 0 or self.lr_final <= 0:
            problems.append("train learning rates must stay positive")
        if self.num_envs < 1:
            problems.append(f"train.num_envs must be >= 1, got {self.num_envs}")
        if problems:
            raise ConfigError(problems)
        return self


def lr_at(step, total_steps, lr_initial, lr_final):
    """Constant for the first third of the budget, then linear decay."""
    third = total_steps / 3.0
    if step <= third:
        return lr_initial
    frac = min(1.0, (step - third) / (total_steps - third))
    return lr_initial + frac * (lr_final - lr_initial)


@dataclass
class Rollout:
    """Flattened per-step records across all environment segments."""

    obs: np.ndarray  # (N, C, H, W)
    actions: np.ndarray  # (N,)
    rewards: np.ndarray  # (N,)
    dones: np.ndarray  # (N,) bool
    log_probs: np.ndarray  # (N,) collection-time log pi(a_t|s_t)
    values: np.ndarray  # (N,) collection-time V(s_t)
    env_index: np.ndarray  # (N,)
    seg_bounds: list  # [(start, end), ...] contiguous slice per env segment
    bootstrap_obs: dict = field(default_factory=dict)  # env -> obs of s_{L+1}

    def __len__(self):
        return len(self.actions)


class EnvPool:
    """W sequential-or-threaded environment instances with derived seeds.

    Stepping order and rng streams are fixed by env index, so results are
    identical for any worker count.
    """

    def __init__(self, env_factory, num_envs, seed, workers=1):
        self.envs = [env_factory() for _ in range(num_envs)]
        self.obs = [
            env.reset(seed=int(np.random.default_rng([seed, i]).integers(2**31)))
            for i, env in enumerate(self.envs)
        ]
        self.action_rng = np.random.default_rng([seed, 997])
        self.steps = 0
        self.pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def collect(self, policy_fn, length) -> Rollout:
        """policy_fn(obs_batch) -> (log_probs (B,A), values (B,)) arrays."""
        w = len(self.envs)
        recs = [[] for _ in range(w)]
        active = list(range(w))
        for _ in range(length):
            if not active:
                break
            batch = np.stack([self.obs[i] for i in active])
            log_probs, values = policy_fn(batch)
            actions = sample_action(log_probs, self.action_rng)
            if self.pool is not None:
                transitions = list(
                    self.pool.map(lambda ia: self.envs[ia[0]].step(ia[1]), zip(active, actions))
                )
            else:
                transitions = [self.envs[i].step(a) for i, a in zip(active, actions)]
            still = []
            for row, (i, tr) in enumerate(zip(active, transitions)):
                recs[i].append(
                    (
                        tr.state,
                        tr.action,
                        tr.reward,
                        tr.done,
                        log_probs[row, tr.action],
                        values[row],
                    )
                )
                self.obs[i] = tr.next_state
                if not tr.done:
                    still.append(i)
            active = still

        seg_bounds, flat = [], []
        env_index = []
        bootstrap_obs = {}
        for i in range(w):
            start = len(flat)
            flat.extend(recs[i])
            env_index.extend([i] * len(recs[i]))
            seg_bounds.append((start, len(flat)))
            if recs[i] and not recs[i][-1][3]:
                bootstrap_obs[i] = self.obs[i]
        self.steps += len(flat)
        for i in range(w):
            if recs[i] and recs[i][-1][3]:
                self.obs[i] = self.envs[i].reset()
        return Rollout(
            obs=np.stack([r[0] for r in flat]),
            actions=np.array([r[1] for r in flat], dtype=np.int64),
            rewards=np.array([r[2] for r in flat]),
            dones=np.array([r[3] for r in flat], dtype=bool),
            log_probs=np.array([r[4] for r in flat]),
            values=np.array([r[5] for r in flat]),
            env_index=np.array(env_index, dtype=np.int64),
            seg_bounds=seg_bounds,
            bootstrap_obs=bootstrap_obs,
        )


def td_error(rewards, dones, values, next_values, discount) -> np.ndarray:
    """One-step td residuals; the terminal mask zeroes the bootstrap."""
    rewards = np.asarray(rewards, dtype=np.float64)
    mask = 1.0 - np.asarray(dones, dtype=np.float64)
    return rewards + discount * np.asarray(next_values) * mask - np.asarray(values)


@dataclass
class LossBreakdown:
    """Named scalar loss tensors and their weights; `total` composes the
    weighted sum (absent terms are constant zeros)."""

    policy: Tensor
    value: Tensor
    entropy: Tensor
    actor_distill: Tensor = field(default_factory=lambda: Tensor(0.0))
    critic_distill: Tensor = field(default_factory=lambda: Tensor(0.0))
    cost: Tensor = field(default_factory=lambda: Tensor(0.0))
    entropy_coef: float = 0.0
    actor_coef: float = 0.0
    critic_coef: float = 0.0
    cost_coef: float = 0.0

    @property
    def total(self) -> Tensor:
        t = ad.add(self.policy, self.value)
        t = ad.add(t, ad.mul(self.entropy, self.entropy_coef))
        t = ad.add(t, ad.mul(self.actor_distill, self.actor_coef))
        t = ad.add(t, ad.mul(self.critic_distill, self.critic_coef))
        return ad.add(t, ad.mul(self.cost, self.cost_coef))

    def floats(self) -> dict:
        return {
            "policy": self.policy.item(),
            "value": self.value.item(),
            "entropy": self.entropy.item(),
            "actor_distill": self.actor_distill.item(),
            "critic_distill": self.critic_distill.item(),
            "cost": self.cost.item(),
            "total": self.total.item(),
        }


@dataclass
class ForwardContext:
    """One shared forward pass over a rollout's observations, reused by the
    distillation terms so supernet noise stays consistent."""

    obs: np.ndarray  # record observations (N, ...)
    log_probs: Tensor  # (N, A)
    values: Tensor  # (N,)
    next_values: np.ndarray  # detached (N,)


def _forward_records(net: AgentNet, rollout: Rollout, rng=None, value_source=None):
    n = len(rollout)
    tail_envs = sorted(rollout.bootstrap_obs)
    if tail_envs:
        batch = np.concatenate(
            [rollout.obs, np.stack([rollout.bootstrap_obs[e] for e in tail_envs])]
        )
    else:
        batch = rollout.obs
    logits, values = net.forward(Tensor(batch), rng=rng)
    log_probs = ad.log(ad.softmax(logits, axis=1))

    if value_source is not None:
        value_arr = value_source(batch)
    else:
        value_arr = values.data
    tail_pos = {e: n + j for j, e in enumerate(tail_envs)}
    next_values = np.zeros(n)
    for env, (start, end) in enumerate(rollout.seg_bounds):
        for i in range(start, end):
            if rollout.dones[i]:
                continue
            next_values[i] = value_arr[i + 1] if i + 1 < end else value_arr[tail_pos[env]]

    if tail_envs:
        log_probs = _crop_leading(log_probs, n)
        values = _crop_leading(values, n)
    return ForwardContext(
        obs=rollout.obs, log_probs=log_probs, values=values, next_values=next_values
    ), value_arr[:n]


def _crop_leading(t: Tensor, n: int) -> Tensor:
    """First n leading-axis entries, with gradient routed back zero-padded."""
    out = Tensor(t.data[:n])
    if t.requires_grad:

        def backward(g):
            full = np.zeros_like(t.data)
            full[:n] = g
            t._accumulate(full)

        out.requires_grad = True
        out._parents = (t,)
        out._backward = backward
        out._op = "crop"
    return out


def a2c_losses(
    net: AgentNet,
    rollout: Rollout,
    discount: float,
    entropy_coef: float,
    rng=None,
    value_source=None,
    train_value=True,
    return_ctx=False,
):
    """Policy, value, and entropy losses over a rollout.

    The td-error weighting the policy term and the value-loss targets are
    both gradient-detached; `value_source` substitutes an external critic
    (teacher reuse), in which case the student value loss is dropped.
    """
    ctx, record_values = _forward_records(net, rollout, rng=rng, value_source=value_source)
    delta = td_error(rollout.rewards, rollout.dones, record_values, ctx.next_values, discount)

    logp_taken = ad.index_select(ctx.log_probs, rollout.actions)
    policy = ad.mean(ad.mul(Tensor(-delta), logp_taken))

    if train_value:
        targets = rollout.rewards + discount * ctx.next_values * (1.0 - rollout.dones)
        value = ad.mean(ad.mul(0.5, ad.square(Tensor(targets) - ctx.values)))
    else:
        value = Tensor(0.0)

    probs = ad.exp(ctx.log_probs)
    entropy = ad.mean(ad.sum(ad.mul(probs, ctx.log_probs), axis=1))

    breakdown = LossBreakdown(
        policy=policy, value=value, entropy=entropy, entropy_coef=entropy_coef
    )
    if return_ctx:
        return breakdown, ctx
    return breakdown


# -- optimizers ------------------------------------------------------------


def clip_grads(params: dict, max_norm: float) -> float:
    """Scale all grads so their global norm is at most max_norm; returns the
    factor applied.  Raises on non-finite gradients, naming the parameter."""
    total = 0.0
    for path, t in params.items():
        if t.grad is None:
            continue
        if not np.all(np.isfinite(t.grad)):
            raise NonFiniteGradientError(path)
        total += float(np.sum(t.grad * t.grad))
    norm = math.sqrt(total)
    if max_norm <= 0 or norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for t in params.values():
        if t.grad is not None:
            t.grad *= scale
    return scale


class RMSProp:
    def __init__(self, decay=0.99, eps=1e-5, clip=0.5):
        self.decay = decay
        self.eps = eps
        self.clip = clip
        self.cache: dict[str, np.ndarray] = {}

    def step(self, params: dict, lr: float):
        clip_grads(params, self.clip)
        for path, t in params.items():
            if t.grad is None:
                continue
            cache = self.cache.get(path)
            if cache is None:
                cache = np.zeros_like(t.data)
                self.cache[path] = cache
            cache *= self.decay
            cache += (1.0 - self.decay) * t.grad * t.grad
            t.data -= lr * t.grad / (np.sqrt(cache) + self.eps)


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, lr: float):
        self.t += 1
        for path, t in params.items():
            if t.grad is None:
                continue
            if not np.all(np.isfinite(t.grad)):
                raise NonFiniteGradientError(path)
            m = self.m.setdefault(path, np.zeros_like(t.data))
            v = self.v.setdefault(path, np.zeros_like(t.data))
            m *= self.beta1
            m += (1 - self.beta1) * t.grad
            v *= self.beta2
            v += (1 - self.beta2) * t.grad * t.grad
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            t.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


# -- evaluation ------------------------------------------------------------


def evaluate(policy_fn, env_factory, episodes=30, null_op_max=30, seed=0, max_rounds=None):
    """Mean undiscounted return over `episodes` episodes with null-op
    starts, sampling from the (stochastic) policy.  Episodes run batched in
    lockstep; returns (mean, per-episode scores)."""
    envs = [env_factory() for _ in range(episodes)]
    obs = [
        env.reset(
            seed=int(np.random.default_rng([seed, 51, i]).integers(2**31)),
            null_op_max=null_op_max,
        )
        for i, env in enumerate(envs)
    ]
    rng = np.random.default_rng([seed, 52])
    scores = np.zeros(episodes)
    alive = list(range(episodes))
    rounds = 0
    cap = max_rounds or max(env.spec.max_episode_steps for env in envs) + 1
    while alive and rounds < cap:
        batch = np.stack([obs[i] for i in alive])
        log_probs, _ = policy_fn(batch)
        actions = sample_action(log_probs, rng)
        nxt = []
        for row, i in enumerate(alive):
            tr = envs[i].step(int(actions[row]))
            scores[i] += tr.reward
            obs[i] = tr.next_state
            if not tr.done:
                nxt.append(i)
        alive = nxt
        rounds += 1
    return float(scores.mean()), scores


def net_policy(net: AgentNet, gumbel_rng=None):
    """Adapter turning an AgentNet into the (log_probs, values) callable the
    pool and evaluator consume; runs without graph recording."""

    def policy_fn(obs_batch):
        with ad.no_grad():
            logits, values = net.forward(Tensor(obs_batch), rng=gumbel_rng)
            log_probs = ad.log(ad.softmax(logits, axis=1))
        return log_probs.data, values.data

    return policy_fn


def uniform_policy_fn(num_actions):
    def policy_fn(obs_batch):
        b = obs_batch.shape[0]
        return (
            np.full((b, num_actions), -np.log(num_actions)),
            np.zeros(b),
        )

    return policy_fn


# -- training loop ----------------------------------------------------------


class Trainer:
    """Owns the update loop; the loss builder is injectable so distillation
    and search reuse the collection/optimizer machinery."""

    def __init__(
        self,
        net: AgentNet,
        env_factory,
        config: TrainConfig,
        loss_builder=None,
        metrics_writer=None,
        checkpoint_fn=None,
        trainable=None,
        gumbel_stream=None,
    ):
        config.validate()
        self.net = net
        self.env_factory = env_factory
        self.cfg = config
        self.pool = EnvPool(env_factory, config.num_envs, config.seed, config.workers)
        self.opt = RMSProp(config.rmsprop_decay, config.rmsprop_eps, config.grad_clip)
        self.loss_builder = loss_builder or (
            lambda net, rollout, rng: a2c_losses(
                net, rollout, config.discount, config.entropy_coef, rng=rng
            )
        )
        self.metrics_writer = metrics_writer
        self.checkpoint_fn = checkpoint_fn
        self.trainable = trainable  # dict of params; default = all net params
        self.gumbel_stream = gumbel_stream  # iteration -> rng, for supernets
        self.history = []
        self.iteration = 0

    def _policy_fn(self, rng):
        return net_policy(self.net, gumbel_rng=rng)

    def _rng_for_iteration(self):
        if self.gumbel_stream is None:
            return None
        return self.gumbel_stream(self.iteration)

    def lr(self):
        return lr_at(self.pool.steps, self.cfg.total_steps, self.cfg.lr_initial, self.cfg.lr_final)

    def update_once(self):
        rng = self._rng_for_iteration()
        rollout = self.pool.collect(self._policy_fn(rng), self.cfg.rollout_length)
        breakdown = self.loss_builder(self.net, rollout, rng)
        total = breakdown.total
        if not np.isfinite(total.data):
            raise RuntimeError(f"non-finite training loss: {breakdown.floats()}")
        params = self.trainable if self.trainable is not None else self.net.params()
        self.net.zero_grad()
        for t in params.values():
            t.zero_grad()
        total.backward()
        self.opt.step(params, self.lr())
        self.iteration += 1
        return breakdown

    def run_eval(self, breakdown=None):
        mean_score, _ = evaluate(
            self._policy_fn(np.random.default_rng([self.cfg.seed, 53, self.pool.steps])),
            self.env_factory,
            episodes=self.cfg.eval_episodes,
            null_op_max=self.cfg.null_op_max,
            seed=self.cfg.seed,
        )
        record = {
            "step": self.pool.steps,
            "mean_score": mean_score,
            "lr": self.lr(),
        }
        if breakdown is not None:
            record["losses"] = breakdown.floats()
        self.history.append(record)
        if self.metrics_writer is not None:
            self.metrics_writer.write(record)
        return record

    def train(self):
        next_eval = self.cfg.eval_interval
        next_ckpt = self.cfg.checkpoint_interval or float("inf")
        breakdown = None
        while self.pool.steps < self.cfg.total_steps:
            breakdown = self.update_once()
            if self.pool.steps >= next_eval:
                self.run_eval(breakdown)
                next_eval += self.cfg.eval_interval
            if self.pool.steps >= next_ckpt:
                if self.checkpoint_fn is not None:
                    self.checkpoint_fn(self.net, self.pool.steps)
                next_ckpt += self.cfg.checkpoint_interval
        final = self.run_eval(breakdown)
        if self.checkpoint_fn is not None:
            self.checkpoint_fn(self.net, self.pool.steps)
        self.pool.close()
        return final
