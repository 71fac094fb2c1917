"""Policy-gradient training under probabilistic (whole-trajectory) safety constraints."""

from safepg.navenv import NavWorld, Trajectory, default_world, is_safe, reward, rollout, step
from safepg.policy import PolicyParams, default_policy

__all__ = [
    "NavWorld",
    "PolicyParams",
    "Trajectory",
    "default_policy",
    "default_world",
    "is_safe",
    "reward",
    "rollout",
    "step",
]

__version__ = "0.1.0"
