"""Teacher-to-student knowledge transfer for actor-critic agents.

The teacher's action distribution is distilled into the student with a KL
term and the teacher's value estimates with a soft MSE term, both
evaluated on the student's own on-policy rollout states.  Four modes:

  none                   plain A2C (both transfer weights forced to 0)
  actor_only             KL term only
  actor_plus_reuse_critic  KL term; the student critic is never trained and
                         the td-error / value targets use the teacher's
                         values directly
  proposed               KL term plus the soft value MSE

Teachers are loaded once, frozen, and only ever run inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .agent import AgentNet, build_agent, load_agent
from .autodiff import Tensor
from .errors import ConfigError
from .trainer import LossBreakdown, TrainConfig, Trainer, a2c_losses

PROB_FLOOR = 1e-12

MODES = ("none", "actor_only", "actor_plus_reuse_critic", "proposed")


@dataclass
class DistillConfig:
    mode: str = "proposed"
    actor_coef: float = 1e-1  # weight of the actor KL term
    critic_coef: float = 1e-3  # weight of the critic MSE term
    teacher_path: str | None = None

    def validate(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"distill.mode must be one of {MODES}, got {self.mode!r}")
        if self.actor_coef < 0 or self.critic_coef < 0:
            problems.append("distill coefficients must be >= 0")
        if self.mode != "none" and self.teacher_path is None:
            problems.append(f"distill.mode={self.mode!r} needs a teacher checkpoint")
        if problems:
            raise ConfigError(problems)
        return self


@dataclass
class TeacherOutputs:
    """Teacher policy distribution and values on the student's visited
    states; plain arrays, so gradient-free by construction."""

    probs: np.ndarray  # (N, A)
    values: np.ndarray  # (N,)


def load_teacher(path, env_spec):
    net, config = load_agent(path, env_spec)
    net.freeze()
    return net, config


def teacher_outputs(teacher: AgentNet, obs_batch) -> TeacherOutputs:
    with ad.no_grad():
        logits, values = teacher.forward(Tensor(obs_batch))
        probs = ad.softmax(logits, axis=1)
    return TeacherOutputs(probs=probs.data, values=values.data)


def teacher_value_fn(teacher: AgentNet):
    def fn(obs_batch):
        with ad.no_grad():
            _, values = teacher.forward(Tensor(obs_batch))
        return values.data

    return fn


def actor_distill_loss(teacher_probs, student_log_probs: Tensor) -> Tensor:
    """Mean KL(teacher || student) per step; the student probabilities are
    floored at 1e-12 before the log so near-deterministic students cannot
    produce infinities."""
    p_tea = np.asarray(teacher_probs, dtype=np.float64)
    p_stu = ad.exp(student_log_probs)
    floored = ad.add(ad.relu(ad.add(p_stu, -PROB_FLOOR)), PROB_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_tea = np.where(p_tea > 0.0, np.log(np.maximum(p_tea, PROB_FLOOR)), 0.0)
    inner = ad.mul(Tensor(p_tea), ad.add(Tensor(log_tea), ad.mul(ad.log(floored), -1.0)))
    return ad.mean(ad.sum(inner, axis=1))


def critic_distill_loss(teacher_values, student_values: Tensor) -> Tensor:
    """Mean 0.5 * (V_student - V_teacher)^2."""
    vt = np.asarray(teacher_values, dtype=np.float64)
    diff = student_values - Tensor(vt)
    return ad.mean(ad.mul(0.5, ad.square(diff)))


def total_loss(
    net: AgentNet,
    rollout,
    teacher: AgentNet | None,
    train_cfg: TrainConfig,
    distill_cfg: DistillConfig,
    rng=None,
) -> LossBreakdown:
    """A2C losses plus the mode's distillation terms, all sharing one
    forward pass over the rollout's observations."""
    distill_cfg.validate()
    mode = distill_cfg.mode
    if mode == "none":
        return a2c_losses(net, rollout, train_cfg.discount, train_cfg.entropy_coef, rng=rng)
    if teacher is None:
        raise ConfigError([f"distill.mode={mode!r} requires a loaded teacher"])

    reuse = mode == "actor_plus_reuse_critic"
    breakdown, ctx = a2c_losses(
        net,
        rollout,
        train_cfg.discount,
        train_cfg.entropy_coef,
        rng=rng,
        value_source=teacher_value_fn(teacher) if reuse else None,
        train_value=not reuse,
        return_ctx=True,
    )
    outputs = teacher_outputs(teacher, ctx.obs)
    breakdown.actor_distill = actor_distill_loss(outputs.probs, ctx.log_probs)
    breakdown.actor_coef = distill_cfg.actor_coef
    if mode == "proposed":
        breakdown.critic_distill = critic_distill_loss(outputs.values, ctx.values)
        breakdown.critic_coef = distill_cfg.critic_coef
    return breakdown


def critic_param_paths(net: AgentNet):
    return [p for p in net.params() if p.startswith("critic.")]


def train_with_distillation(
    student_config,
    env_factory,
    train_cfg: TrainConfig,
    distill_cfg: DistillConfig,
    metrics_writer=None,
    checkpoint_fn=None,
    teacher: AgentNet | None = None,
):
    """Full distillation training run; returns (student net, eval history).

    The teacher is loaded from distill_cfg.teacher_path unless an already
    loaded (frozen) instance is passed in.
    """
    distill_cfg.validate()
    env_spec = env_factory().spec
    student = build_agent(student_config, env_spec, init_seed=train_cfg.seed)
    if teacher is None and distill_cfg.mode != "none":
        teacher, _ = load_teacher(distill_cfg.teacher_path, env_spec)

    trainable = None
    if distill_cfg.mode == "actor_plus_reuse_critic":
        skip = set(critic_param_paths(student))
        trainable = {k: v for k, v in student.params().items() if k not in skip}

    def loss_builder(net, rollout, rng):
        return total_loss(net, rollout, teacher, train_cfg, distill_cfg, rng=rng)

    trainer = Trainer(
        student,
        env_factory,
        train_cfg,
        loss_builder=loss_builder,
        metrics_writer=metrics_writer,
        checkpoint_fn=checkpoint_fn,
        trainable=trainable,
    )
    trainer.train()
    return student, trainer.history
