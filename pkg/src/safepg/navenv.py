"""Continuous 2-D navigation among circular obstacles.

The agent is a single integrator: ``s' = s + a * dt``. A state is safe when it
lies inside the map box and strictly outside every obstacle disc. Episodes run
for the full horizon regardless of safety; the safety-product weights in
:mod:`safepg.gradients` account for any violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from safepg import policy as _policy


class NumericalDivergence(FloatingPointError):
    """A state or action stopped being finite during simulation."""


@dataclass(frozen=True)
class NavWorld:
    bounds_lo: tuple[float, float] = (0.0, 0.0)
    bounds_hi: tuple[float, float] = (10.0, 10.0)
    obstacles: tuple[tuple[tuple[float, float], float], ...] = ()
    goal: tuple[float, float] = (9.0, 1.5)
    start: tuple[float, float] = (1.0, 8.5)
    dt: float = 0.05
    horizon: int = 20
    _centers: np.ndarray = field(init=False, repr=False, compare=False)
    _radii: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        obstacles = tuple(
            ((float(c[0]), float(c[1])), float(r)) for c, r in self.obstacles
        )
        object.__setattr__(self, "obstacles", obstacles)
        for name in ("bounds_lo", "bounds_hi", "goal", "start"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 2:
                raise ValueError(f"{name} must be a 2-vector")
            object.__setattr__(self, name, value)
        if any(r <= 0 for _, r in obstacles):
            raise ValueError("obstacle radii must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be an integer >= 1")
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "dt", float(self.dt))
        centers = np.array([c for c, _ in obstacles], dtype=float).reshape(-1, 2)
        object.__setattr__(self, "_centers", centers)
        object.__setattr__(self, "_radii", np.array([r for _, r in obstacles], dtype=float))
        if not is_safe(self, self.start):
            raise ValueError(f"start {self.start} is not a safe state")


@dataclass(frozen=True)
class Trajectory:
    """One episode. ``states``/``rewards``/``safe_flags`` have horizon+1 entries,
    ``actions`` has horizon entries."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    safe_flags: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.actions)
        if len(self.states) != n + 1 or len(self.rewards) != n + 1 or len(self.safe_flags) != n + 1:
            raise ValueError(
                "inconsistent trajectory lengths: "
                f"states={len(self.states)} actions={n} rewards={len(self.rewards)} "
                f"safe_flags={len(self.safe_flags)}"
            )

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def all_safe(self) -> bool:
        return bool(np.all(self.safe_flags))

    @property
    def cumulative_reward(self) -> float:
        return float(np.sum(self.rewards))


def default_world() -> NavWorld:
    return NavWorld(
        bounds_lo=(0.0, 0.0),
        bounds_hi=(10.0, 10.0),
        obstacles=(
            ((7.0, 7.0), 2.0),
            ((3.0, 7.0), 1.0),
            ((1.5, 4.0), 0.5),
            ((4.5, 3.0), 1.5),
            ((8.0, 3.0), 0.75),
        ),
        goal=(9.0, 1.5),
        start=(1.0, 8.5),
        dt=0.05,
        horizon=20,
    )


def is_safe(world: NavWorld, state: Sequence[float]) -> bool:
    """Inside the closed bounds box and strictly outside every obstacle disc."""
    s = np.asarray(state, dtype=float)
    lo, hi = world.bounds_lo, world.bounds_hi
    if not (lo[0] <= s[0] <= hi[0] and lo[1] <= s[1] <= hi[1]):
        return False
    if len(world._radii) == 0:
        return True
    dist2 = np.sum((world._centers - s) ** 2, axis=1)
    return bool(np.all(dist2 > world._radii**2))


def step(world: NavWorld, state: Sequence[float], action: Sequence[float]) -> np.ndarray:
    s = np.asarray(state, dtype=float)
    a = np.asarray(action, dtype=float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise NumericalDivergence(f"non-finite state {s} or action {a}")
    return s + a * world.dt


def reward(world: NavWorld, state: Sequence[float], action: Sequence[float] | None = None) -> float:
    """Negative squared distance to the goal. ``action`` is accepted and ignored."""
    d = np.asarray(state, dtype=float) - np.asarray(world.goal)
    return -float(d @ d)


def rollout(world: NavWorld, params: _policy.PolicyParams, rng: np.random.Generator) -> Trajectory:
    if not is_safe(world, world.start):
        raise ValueError("rollout requires a safe start state")
    T = world.horizon
    states = np.empty((T + 1, 2))
    actions = np.empty((T, 2))
    states[0] = world.start
    for t in range(T):
        actions[t] = _policy.sample(params, states[t], rng)
        states[t + 1] = step(world, states[t], actions[t])
    if not np.all(np.isfinite(states)):
        raise NumericalDivergence("state left the finite range during rollout")
    diff = states - np.asarray(world.goal)
    rewards = -np.einsum("ij,ij->i", diff, diff)
    safe_flags = np.array([is_safe(world, s) for s in states], dtype=bool)
    return Trajectory(states=states, actions=actions, rewards=rewards, safe_flags=safe_flags)
