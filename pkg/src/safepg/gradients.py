"""Single-episode Monte-Carlo gradient estimators.

Two estimators share the score function of the policy:

* the safety gradient ``G_1 * sum_{t<T} score(S_t, A_t)``, where ``G_1`` is 1
  only when every state after the start is safe, estimates the gradient of
  the probability that the whole trajectory stays safe;
* the value gradient is REINFORCE with reward-to-go weights.

Both accept any policy exposing ``score(state, action)``; Gaussian RBF
policies take a batched fast path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from safepg.policy import PolicyParams, score_sum


class UnsafeStartError(ValueError):
    """The safety-gradient identity assumes the episode starts in the safe set."""


@dataclass(frozen=True)
class GradientEstimate:
    vector: np.ndarray
    episodes_used: int = 1

    def __post_init__(self) -> None:
        vector = np.asarray(self.vector, dtype=float)
        if vector.ndim != 1:
            raise ValueError("gradient estimate must be a flat vector")
        if not np.all(np.isfinite(vector)):
            raise FloatingPointError("gradient estimate has non-finite entries")
        if self.episodes_used < 0:
            raise ValueError("episodes_used must be nonnegative")
        object.__setattr__(self, "vector", vector)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


def safety_products(safe_flags: Sequence[bool]) -> np.ndarray:
    """``G_t = prod_{u >= t} flags[u]`` for every t, evaluated right to left."""
    flags = np.asarray(safe_flags, dtype=bool)
    out = np.empty(len(flags))
    acc = 1.0
    for t in range(len(flags) - 1, -1, -1):
        acc = acc * float(flags[t])
        out[t] = acc
    return out


def _weighted_score_sum(trajectory, policy, weights) -> np.ndarray:
    T = trajectory.horizon
    if isinstance(policy, PolicyParams):
        return score_sum(policy, trajectory.states[:T], trajectory.actions, weights)
    total = None
    for t in range(T):
        g = weights[t] * np.asarray(policy.score(trajectory.states[t], trajectory.actions[t]))
        total = g if total is None else total + g
    return total


def constraint_grad_estimate(trajectory, policy) -> GradientEstimate:
    flags = np.asarray(trajectory.safe_flags, dtype=bool)
    if not flags[0]:
        raise UnsafeStartError("trajectory starts outside the safe set")
    g1 = safety_products(flags)[1] if len(flags) > 1 else 1.0
    T = trajectory.horizon
    if g1 == 0.0:
        n = policy.n_params
        return GradientEstimate(np.zeros(n), 1)
    return GradientEstimate(_weighted_score_sum(trajectory, policy, np.ones(T)), 1)


def reward_to_go(rewards: Sequence[float]) -> np.ndarray:
    """``R_t = sum_{u >= t} rewards[u]`` for every t."""
    # overflow yields inf, which GradientEstimate rejects downstream
    with np.errstate(over="ignore"):
        return np.cumsum(np.asarray(rewards, dtype=float)[::-1])[::-1].copy()


def value_grad_estimate(trajectory, policy, baseline=None) -> GradientEstimate:
    """REINFORCE estimate ``sum_{t<T} score_t * (R_t - b_t)``.

    ``baseline`` is a scalar or a per-step array of length T. Any value that
    does not depend on the episode's own actions keeps the estimate unbiased.
    """
    T = trajectory.horizon
    weights = reward_to_go(trajectory.rewards)[:T]
    if baseline is not None:
        weights = weights - np.broadcast_to(np.asarray(baseline, dtype=float), (T,))
    return GradientEstimate(_weighted_score_sum(trajectory, policy, weights), 1)


def batch_average(estimates: Sequence[GradientEstimate]) -> GradientEstimate:
    if len(estimates) == 0:
        raise ValueError("cannot average an empty batch of estimates")
    n = len(estimates[0].vector)
    if any(len(e.vector) != n for e in estimates):
        raise ValueError("estimates have different lengths")
    vector = np.mean(np.stack([e.vector for e in estimates]), axis=0)
    return GradientEstimate(vector, sum(e.episodes_used for e in estimates))
