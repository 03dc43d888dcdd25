"""Actor-critic RL, actor+critic distillation, and cost-aware
differentiable architecture search on small pixel tasks."""

__version__ = "0.1.0"
