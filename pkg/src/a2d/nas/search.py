"""Differentiable architecture search with distillation stabilization.

One-level optimization: every iteration collects a rollout through the
Gumbel-Softmax supernet, computes the distillation-based training loss
plus the cost-weighted expected-FLOPs penalty, and updates the network
weights (RMSProp, scheduled lr) and the architecture logits (Adam, fixed
lr) from the same batch.  Bi-level alternates the two updates on separate
rollouts and exists only as a comparison arm.  Temperature anneals
geometrically so the final mixtures are near one-hot before derivation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..agent import BackboneConfig, build_agent
from ..autodiff import Tensor
from ..distill import DistillConfig, total_loss
from ..errors import ConfigError
from ..trainer import Adam, EnvPool, RMSProp, TrainConfig, evaluate, lr_at, net_policy
from .cells import CANDIDATE_OPS, ArchParams
from .cost import cell_cost_table, supernet_expected_flops


@dataclass
class SearchConfig:
    cost_weight: float = 0.1  # lambda on the cost loss
    arch_lr: float = 1e-3
    arch_beta1: float = 0.9
    tau0: float = 5.0
    tau_anneal: float = 0.98
    anneal_events: int = 200
    optimization: str = "one_level"  # or bi_level
    search_steps: int | None = None  # default: 2/3 of the training budget

    def validate(self):
        problems = []
        if self.cost_weight < 0:
            problems.append(f"search.cost_weight must be >= 0, got {self.cost_weight}")
        if self.optimization not in ("one_level", "bi_level"):
            problems.append(
                f"search.optimization must be one_level|bi_level, got {self.optimization!r}"
            )
        final_tau = self.tau0 * self.tau_anneal**self.anneal_events
        if not 0.05 <= final_tau <= 0.2:
            problems.append(
                f"annealing must land the final temperature in [0.05, 0.2]; "
                f"{self.tau0} * {self.tau_anneal}^{self.anneal_events} = {final_tau:.4f}"
            )
        if problems:
            raise ConfigError(problems)
        return self

    def steps(self, train_cfg: TrainConfig) -> int:
        return self.search_steps if self.search_steps else (2 * train_cfg.total_steps) // 3


def cost_loss(arch: ArchParams, cost_table) -> Tensor:
    """Expected FLOPs under the noise-free softmax of the logits, normalized
    by the most expensive architecture so the value lies in (0, 1]."""
    table = np.asarray(cost_table, dtype=np.float64)
    max_total = float(table.max(axis=1).sum())
    total = None
    for cell in range(table.shape[0]):
        row = ad.softmax(ad.index_select(arch.logits, cell), axis=0)
        contrib = ad.sum(ad.mul(row, Tensor(table[cell])))
        total = contrib if total is None else ad.add(total, contrib)
    return ad.mul(total, 1.0 / max_total)


@dataclass
class SearchResult:
    net: object
    arch: ArchParams
    history: list  # eval records
    arch_history: list  # {step, probs, tau, expected_mflops}
    steps: int


def search(
    supernet_config: BackboneConfig,
    env_factory,
    train_cfg: TrainConfig,
    search_cfg: SearchConfig,
    distill_cfg: DistillConfig,
    teacher=None,
    metrics_writer=None,
    arch_writer=None,
) -> SearchResult:
    search_cfg.validate()
    distill_cfg.validate()
    if supernet_config.kind != "supernet":
        raise ConfigError([f"search needs a supernet backbone, got {supernet_config.kind!r}"])

    env_spec = env_factory().spec
    net = build_agent(supernet_config, env_spec, init_seed=train_cfg.seed)
    arch = net.backbone.arch
    arch.tau = search_cfg.tau0
    arch.anneal_factor = search_cfg.tau_anneal
    total_search_steps = search_cfg.steps(train_cfg)
    arch.anneal_interval = max(1, total_search_steps // search_cfg.anneal_events)

    if distill_cfg.mode != "none" and teacher is None:
        from ..distill import load_teacher

        teacher, _ = load_teacher(distill_cfg.teacher_path, env_spec)

    pool = EnvPool(env_factory, train_cfg.num_envs, train_cfg.seed, train_cfg.workers)
    theta_opt = RMSProp(train_cfg.rmsprop_decay, train_cfg.rmsprop_eps, train_cfg.grad_clip)
    alpha_opt = Adam(beta1=search_cfg.arch_beta1)
    table = cell_cost_table(supernet_config, env_spec.obs_shape)

    theta = net.params()
    alpha = {"arch.logits": arch.logits}
    history, arch_history = [], []
    iteration = 0
    annealed = 0
    next_eval = train_cfg.eval_interval

    def record_arch():
        entry = {
            "step": pool.steps,
            "tau": arch.tau,
            "probs": arch.probs().tolist(),
            "expected_mflops": supernet_expected_flops(
                supernet_config, env_spec.obs_shape, arch.probs()
            )
            / 1e6,
        }
        arch_history.append(entry)
        if arch_writer is not None:
            arch_writer.write(entry)

    while pool.steps < total_search_steps:
        rng = np.random.default_rng([train_cfg.seed, 3, iteration])
        rollout = pool.collect(net_policy(net, gumbel_rng=rng), train_cfg.rollout_length)
        breakdown = total_loss(net, rollout, teacher, train_cfg, distill_cfg, rng=rng)
        breakdown.cost = cost_loss(arch, table)
        breakdown.cost_coef = search_cfg.cost_weight
        total = breakdown.total
        if not np.isfinite(total.data):
            raise RuntimeError(f"non-finite search loss: {breakdown.floats()}")

        net.zero_grad()
        arch.logits.zero_grad()
        total.backward()

        lr = lr_at(pool.steps, train_cfg.total_steps, train_cfg.lr_initial, train_cfg.lr_final)
        if search_cfg.optimization == "one_level":
            theta_opt.step(theta, lr)
            alpha_opt.step(alpha, search_cfg.arch_lr)
        else:
            if iteration % 2 == 0:
                theta_opt.step(theta, lr)
            else:
                alpha_opt.step(alpha, search_cfg.arch_lr)

        while pool.steps >= (annealed + 1) * arch.anneal_interval and annealed < search_cfg.anneal_events:
            arch.anneal()
            annealed += 1

        if pool.steps >= next_eval:
            mean_score, _ = evaluate(
                net_policy(net, np.random.default_rng([train_cfg.seed, 53, pool.steps])),
                env_factory,
                episodes=train_cfg.eval_episodes,
                null_op_max=train_cfg.null_op_max,
                seed=train_cfg.seed,
            )
            entry = {
                "step": pool.steps,
                "mean_score": mean_score,
                "lr": lr,
                "tau": arch.tau,
                "losses": breakdown.floats(),
            }
            history.append(entry)
            if metrics_writer is not None:
                metrics_writer.write(entry)
            record_arch()
            next_eval += train_cfg.eval_interval
        iteration += 1

    record_arch()
    pool.close()
    return SearchResult(
        net=net, arch=arch, history=history, arch_history=arch_history, steps=pool.steps
    )


def derive(
    arch: ArchParams, supernet_config: BackboneConfig, obs_shape
) -> BackboneConfig:
    """Per-cell argmax over the operator probabilities; exact ties break to
    the cheaper op, then the lower op index.  The result is a standalone
    fixed architecture buildable by build_agent."""
    probs = arch.probs()
    table = cell_cost_table(supernet_config, obs_shape)
    chosen = []
    for cell in range(probs.shape[0]):
        best = probs[cell].max()
        tied = [j for j in range(len(CANDIDATE_OPS)) if probs[cell, j] == best]
        tied.sort(key=lambda j: (table[cell, j], j))
        chosen.append(CANDIDATE_OPS[tied[0]])
    return BackboneConfig(
        kind="derived",
        stem=supernet_config.stem,
        groups=supernet_config.groups,
        derived_ops=tuple(chosen),
        feature_dim=supernet_config.feature_dim,
        batch_norm=supernet_config.batch_norm,
    )


def retrain_derived(
    derived_config: BackboneConfig,
    env_factory,
    train_cfg: TrainConfig,
    distill_cfg: DistillConfig,
    teacher=None,
    metrics_writer=None,
):
    """Train the derived architecture from scratch with distillation;
    returns (net, final record with score / MFLOPs / params)."""
    from ..distill import train_with_distillation
    from .cost import agent_flops

    env_spec = env_factory().spec
    net, history = train_with_distillation(
        derived_config,
        env_factory,
        train_cfg,
        distill_cfg,
        metrics_writer=metrics_writer,
        teacher=teacher,
    )
    final = {
        "score": history[-1]["mean_score"],
        "mflops": agent_flops(derived_config, env_spec.obs_shape, env_spec.num_actions) / 1e6,
        "params": net.param_count(),
    }
    return net, final
