"""Fixed-penalty training: ascend ``V(theta) + lambda * P(trajectory stays safe)``.

Each update averages per-episode value and safety gradients over a batch and
takes one step ``theta += eta * (grad_V + lambda * grad_P)``. Episode ``i`` of
a run always draws from the stream ``(seed, i)``, so sequential and threaded
execution see identical randomness.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from safepg import rng as rngmod
from safepg.gradients import (
    GradientEstimate,
    batch_average,
    constraint_grad_estimate,
    reward_to_go,
    value_grad_estimate,
)
from safepg.navenv import NavWorld, Trajectory, default_world, rollout
from safepg.policy import LatticeSpec, PolicyParams

log = logging.getLogger(__name__)

BASELINES = ("none", "running")


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, episode: int, detail: str = ""):
        self.episode = episode
        super().__init__(f"non-finite gradient at episode {episode}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class RunConfig:
    lam: float = 6.0
    step_size: float = 0.002
    episodes: int = 40_000
    batch_size: int = 1
    eval_episodes: int = 1000
    seed: int = 0
    cadence: int = 1000
    baseline: str = "none"
    baseline_rate: float = 0.01
    delta: float = 0.1
    workers: int = 1
    world: NavWorld = field(default_factory=default_world)
    policy: LatticeSpec = field(default_factory=LatticeSpec)

    def __post_init__(self) -> None:
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError("lambda must be a finite nonnegative number")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        for name in ("episodes", "batch_size", "eval_episodes", "cadence", "workers"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if not 0 < self.baseline_rate <= 1:
            raise ValueError("baseline_rate must lie in (0, 1]")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must lie in [0, 1]")


@dataclass(frozen=True)
class HistoryRow:
    episode: int
    avg_cumulative_reward: float
    safety_probability: float
    constraint_grad_norm: float
    value_grad_norm: float


@dataclass
class TrainHistory:
    per_checkpoint: list[HistoryRow] = field(default_factory=list)

    def append(self, row: HistoryRow) -> None:
        if self.per_checkpoint and row.episode <= self.per_checkpoint[-1].episode:
            raise ValueError("checkpoint episodes must be strictly increasing")
        self.per_checkpoint.append(row)


@dataclass(frozen=True)
class EvalStats:
    safety_probability: float
    avg_cumulative_reward: float
    safety_se: float
    reward_se: float
    mean_final_distance: float
    episodes: int


class RunningBaseline:
    """Per-step exponential average of reward-to-go, fixed within a batch.

    ``rate`` is the weight of a single episode; a batch of n episodes moves the
    average by ``1 - (1 - rate)**n`` toward the batch mean.
    """

    def __init__(self, horizon: int, rate: float):
        self.rate = rate
        self.value: np.ndarray | None = None
        self.horizon = horizon

    def current(self, batch: Sequence[Trajectory]) -> np.ndarray:
        if self.value is None:
            # first batch: start from its own mean so early steps are not dominated by scale
            self.value = np.mean([reward_to_go(t.rewards)[: self.horizon] for t in batch], axis=0)
        return self.value

    def update(self, batch: Sequence[Trajectory]) -> None:
        target = np.mean([reward_to_go(t.rewards)[: self.horizon] for t in batch], axis=0)
        keep = (1 - self.rate) ** len(batch)
        self.value = keep * self.value + (1 - keep) * target


def regularized_update(
    params: PolicyParams,
    batch: Sequence[Trajectory],
    lam: float,
    step_size: float,
    *,
    baseline=None,
    first_episode: int = 0,
    return_grads: bool = False,
):
    """One ascent step on ``V + lam * P`` from a batch of on-policy episodes.

    Returns the new parameters, or ``(params, value_grad, constraint_grad)``
    when ``return_grads`` is set.
    """
    if not batch:
        raise ValueError("update needs at least one trajectory")
    values, constraints = [], []
    for i, traj in enumerate(batch):
        try:
            values.append(value_grad_estimate(traj, params, baseline))
            constraints.append(constraint_grad_estimate(traj, params))
        except FloatingPointError as exc:
            raise NonFiniteGradientError(first_episode + i, str(exc)) from exc
    value_grad = batch_average(values)
    constraint_grad = batch_average(constraints)
    direction = value_grad.vector + lam * constraint_grad.vector
    new_flat = params.flat + step_size * direction
    if not np.all(np.isfinite(new_flat)):
        raise NonFiniteGradientError(first_episode + len(batch) - 1, "update overflowed")
    new_params = params.with_flat(new_flat)
    if return_grads:
        return new_params, value_grad, constraint_grad
    return new_params


def _collect(world: NavWorld, params: PolicyParams, seed: int, purpose: int,
             indices: range, pool: ThreadPoolExecutor | None) -> list[Trajectory]:
    def run(i: int) -> Trajectory:
        return rollout(world, params, rngmod.stream(seed, purpose, i))

    if pool is None:
        return [run(i) for i in indices]
    return list(pool.map(run, indices))


def train(
    config: RunConfig,
    params: PolicyParams | None = None,
    *,
    on_checkpoint: Callable[[HistoryRow, PolicyParams], None] | None = None,
) -> tuple[PolicyParams, TrainHistory]:
    """Run ``config.episodes`` training episodes in batches of ``config.batch_size``.

    A history row is recorded whenever the episode count crosses a multiple of
    ``config.cadence`` and at the end of training; reward and safety columns
    average the training episodes since the previous row.
    ``on_checkpoint`` sees every row before training continues.
    """
    if params is None:
        params = config.policy.build()
    world = config.world
    history = TrainHistory()
    baseline = RunningBaseline(world.horizon, config.baseline_rate) if config.baseline == "running" else None
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    window_rewards: list[float] = []
    window_safe: list[bool] = []
    window_cnorm: list[float] = []
    window_vnorm: list[float] = []
    next_mark = config.cadence
    done = 0
    try:
        while done < config.episodes:
            n = min(config.batch_size, config.episodes - done)
            batch = _collect(world, params, config.seed, rngmod.TRAIN, range(done, done + n), pool)
            b = baseline.current(batch) if baseline is not None else None
            params, vgrad, cgrad = regularized_update(
                params, batch, config.lam, config.step_size,
                baseline=b, first_episode=done, return_grads=True,
            )
            if baseline is not None:
                baseline.update(batch)
            done += n
            window_rewards.extend(t.cumulative_reward for t in batch)
            window_safe.extend(t.all_safe for t in batch)
            window_cnorm.append(cgrad.norm)
            window_vnorm.append(vgrad.norm)
            if done >= next_mark or done == config.episodes:
                row = HistoryRow(
                    episode=done,
                    avg_cumulative_reward=float(np.mean(window_rewards)),
                    safety_probability=float(np.mean(window_safe)),
                    constraint_grad_norm=float(np.mean(window_cnorm)),
                    value_grad_norm=float(np.mean(window_vnorm)),
                )
                history.append(row)
                log.info("episode %d reward %.3f safe %.3f", done, row.avg_cumulative_reward,
                         row.safety_probability)
                if on_checkpoint is not None:
                    on_checkpoint(row, params)
                window_rewards, window_safe, window_cnorm, window_vnorm = [], [], [], []
                while next_mark <= done:
                    next_mark += config.cadence
    finally:
        if pool is not None:
            pool.shutdown()
    return params, history


def evaluation_stats(params: PolicyParams, world: NavWorld, eval_episodes: int, seed: int,
                     workers: int = 1) -> EvalStats:
    if eval_episodes < 1:
        raise ValueError("eval_episodes must be >= 1")
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        trajs = _collect(world, params, seed, rngmod.EVAL, range(eval_episodes), pool)
    finally:
        if pool is not None:
            pool.shutdown()
    safe = np.array([t.all_safe for t in trajs], dtype=float)
    returns = np.array([t.cumulative_reward for t in trajs])
    final = np.array([np.linalg.norm(t.states[-1] - np.asarray(world.goal)) for t in trajs])
    n = len(trajs)
    p = safe.sum() / n
    return EvalStats(
        safety_probability=float(p),
        avg_cumulative_reward=float(returns.mean()),
        safety_se=float(math.sqrt(p * (1 - p) / n)),
        reward_se=float(returns.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        mean_final_distance=float(final.mean()),
        episodes=n,
    )


def evaluate(params: PolicyParams, world: NavWorld, eval_episodes: int = 1000,
             seed: int = 0) -> tuple[float, float]:
    """(fraction of fully safe episodes, mean cumulative reward)."""
    stats = evaluation_stats(params, world, eval_episodes, seed)
    return stats.safety_probability, stats.avg_cumulative_reward


@dataclass(frozen=True)
class SweepRow:
    lam: float
    status: str
    stats: EvalStats | None
    params: PolicyParams | None = None
    history: TrainHistory | None = None
    error: str = ""


def lambda_sweep(base: RunConfig, lambdas: Sequence[float], *,
                 run: Callable[[RunConfig], tuple[PolicyParams, TrainHistory]] | None = None) -> list[SweepRow]:
    """Train and evaluate an independent, zero-initialized policy per lambda.

    A failing run becomes a row with ``status="failed"``; the sweep continues.
    """
    if len(lambdas) == 0:
        raise ValueError("lambda sweep needs at least one value")
    run = run or train
    rows = []
    for lam in sorted(float(v) for v in lambdas):
        try:
            config = replace(base, lam=lam)
            params, history = run(config)
            stats = evaluation_stats(params, config.world, config.eval_episodes, config.seed)
            rows.append(SweepRow(lam, "ok", stats, params, history))
        except Exception as exc:  # noqa: BLE001 - recorded per row by contract
            log.warning("lambda=%g failed: %s", lam, exc)
            rows.append(SweepRow(lam, "failed", None, error=f"{type(exc).__name__}: {exc}"))
    return rows
