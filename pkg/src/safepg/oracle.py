"""Exact ground truth on tiny tabular MDPs.

Trajectories are enumerated exhaustively, so safety probabilities and their
gradients are computed with no sampling error. The gradient is obtained three
independent ways (path enumeration, the backward recursion over conditional
expectations, and central finite differences) so that each can certify the
others and the Monte-Carlo estimator in :mod:`safepg.gradients`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from safepg.navenv import Trajectory

MAX_PATHS = 10**6


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """``transition[s, a, s']`` is the probability of moving to ``s'``."""

    transition: np.ndarray
    safe_set: frozenset[int]
    start_state: int
    horizon: int
    validate: bool = True

    def __post_init__(self) -> None:
        P = np.asarray(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "safe_set", frozenset(int(s) for s in self.safe_set))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, rtol=0, atol=1e-12):
            raise ValueError("transition rows must be probability vectors")
        if not 0 <= self.start_state < P.shape[0]:
            raise ValueError("start_state out of range")
        # validate=False lets tests build an unsafe-start instance on purpose.
        if self.validate and self.start_state not in self.safe_set:
            raise ValueError("start_state must be in the safe set")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def safe_mask(self) -> np.ndarray:
        return np.array([s in self.safe_set for s in range(self.n_states)])


@dataclass(frozen=True, eq=False)
class TabularSoftmaxPolicy:
    logits: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "logits", np.asarray(self.logits, dtype=float))

    @property
    def n_params(self) -> int:
        return self.logits.size

    @property
    def flat(self) -> np.ndarray:
        return self.logits.ravel()

    def with_flat(self, vector) -> "TabularSoftmaxPolicy":
        return TabularSoftmaxPolicy(np.asarray(vector, dtype=float).reshape(self.logits.shape))

    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def log_prob(self, state, action) -> float:
        return float(np.log(self.probs()[int(state), int(action)]))

    def score(self, state, action) -> np.ndarray:
        """Gradient of ``log pi(action | state)`` over the flattened logits."""
        s, a = int(state), int(action)
        g = np.zeros_like(self.logits)
        g[s] = -self.probs()[s]
        g[s, a] += 1.0
        return g.ravel()


def _path_count(mdp: FiniteMdp) -> int:
    return (mdp.n_states * mdp.n_actions) ** mdp.horizon


def enumerate_trajectories(
    mdp: FiniteMdp, policy: TabularSoftmaxPolicy
) -> list[tuple[tuple[tuple[int, ...], tuple[int, ...]], float]]:
    """All ``((states, actions), probability)`` pairs, zero-probability paths included."""
    if _path_count(mdp) > MAX_PATHS:
        raise EnumerationTooLarge(
            f"{_path_count(mdp)} paths exceeds the enumeration guard of {MAX_PATHS}"
        )
    pi = policy.probs()
    P = mdp.transition
    out = []
    steps = itertools.product(range(mdp.n_actions), range(mdp.n_states))
    for combo in itertools.product(list(steps), repeat=mdp.horizon):
        states = [mdp.start_state]
        prob = 1.0
        for a, s_next in combo:
            s = states[-1]
            prob *= pi[s, a] * P[s, a, s_next]
            states.append(s_next)
        actions = tuple(a for a, _ in combo)
        out.append(((tuple(states), actions), prob))
    return out


def as_trajectory(mdp: FiniteMdp, states, actions) -> Trajectory:
    """Wrap a tabular path so the Monte-Carlo estimators can consume it."""
    states = np.asarray(states, dtype=int)
    safe = mdp.safe_mask[states]
    return Trajectory(
        states=states,
        actions=np.asarray(actions, dtype=int),
        rewards=np.zeros(len(states)),
        safe_flags=safe,
    )


def iter_weighted_trajectories(
    mdp: FiniteMdp, policy: TabularSoftmaxPolicy
) -> Iterator[tuple[Trajectory, float]]:
    for (states, actions), prob in enumerate_trajectories(mdp, policy):
        yield as_trajectory(mdp, states, actions), prob


def exact_safety_probability(mdp: FiniteMdp, policy: TabularSoftmaxPolicy) -> float:
    safe = mdp.safe_mask
    total = 0.0
    for (states, _), prob in enumerate_trajectories(mdp, policy):
        if all(safe[s] for s in states):
            total += prob
    return total


def exact_constraint_grad(mdp: FiniteMdp, policy: TabularSoftmaxPolicy) -> np.ndarray:
    """Differentiate the enumerated sum: each all-safe path contributes its
    probability times the sum of its per-step log-policy gradients."""
    safe = mdp.safe_mask
    pi = policy.probs()
    grad = np.zeros_like(policy.logits)
    for (states, actions), prob in enumerate_trajectories(mdp, policy):
        if prob == 0.0 or not all(safe[s] for s in states):
            continue
        for s, a in zip(states[:-1], actions):
            grad[s] -= prob * pi[s]
            grad[s, a] += prob
    return grad.ravel()


def exact_constraint_grad_recursive(mdp: FiniteMdp, policy: TabularSoftmaxPolicy) -> np.ndarray:
    """Backward recursion over ``v_t(s) = E[G_t | S_{t-1} = s]`` and its gradient.

    Boundary (t = T): ``grad v_T(s) = E[1(S_T safe) * score(A_{T-1}, s)]``.
    Step (t < T):     ``grad v_t(s) = E[grad v_{t+1}(S_t) 1(S_t safe)]
                                     + E[1(S_t safe) v_{t+1}(S_t) score(A_{t-1}, s)]``.
    The safety gradient is ``1(S_0 safe) * grad v_1(S_0)``.
    """
    nS, nA = mdp.n_states, mdp.n_actions
    P = mdp.transition
    pi = policy.probs()
    safe = mdp.safe_mask.astype(float)
    n = policy.n_params

    # score[s, a] = d log pi(a|s) / d logits, flattened
    score = np.zeros((nS, nA, n))
    for s in range(nS):
        for a in range(nA):
            score[s, a] = policy.score(s, a)

    # Boundary: G_{T+1} is identically 1 so its conditional value is 1 and has no gradient.
    v_next = np.ones(nS)
    grad_next = np.zeros((nS, n))
    for _ in range(mdp.horizon):
        # w[s, a] = E[1(S' safe) v_next(S') | s, a]
        w = P @ (safe * v_next)
        v = np.einsum("sa,sa->s", pi, w)
        carried = np.einsum("sa,sat,t,tn->sn", pi, P, safe, grad_next)
        own = np.einsum("sa,sa,san->sn", pi, w, score)
        v_next, grad_next = v, carried + own
    return safe[mdp.start_state] * grad_next[mdp.start_state]


def lemma2_unrolled_grad(mdp: FiniteMdp, policy: TabularSoftmaxPolicy) -> np.ndarray:
    """Unrolled form: ``sum_{t<=T-2} E[G_1 score_t] + E[grad v_T(S_{T-1}) prod_{1<=t<=T-1} safe_t]``.

    The first sum comes from path enumeration; the boundary term uses a forward
    pass over the all-safe prefix distribution and the one-step gradient
    ``grad v_T(s) = sum_a pi(a|s) P(safe | s, a) score(s, a)``.
    """
    nS, nA = mdp.n_states, mdp.n_actions
    P = mdp.transition
    pi = policy.probs()
    safe = mdp.safe_mask
    T = mdp.horizon
    reach_safe = P @ safe.astype(float)
    boundary = np.zeros((nS, policy.n_params))
    for s in range(nS):
        for a in range(nA):
            boundary[s] += pi[s, a] * reach_safe[s, a] * policy.score(s, a)
    # prefix[s] = P(S_{T-1} = s and S_1..S_{T-1} all safe)
    prefix = np.zeros(nS)
    prefix[mdp.start_state] = 1.0
    for _ in range(T - 1):
        prefix = np.einsum("s,sa,sat->t", prefix, pi, P) * safe
    total = prefix @ boundary
    if T >= 2:
        for (states, actions), prob in enumerate_trajectories(mdp, policy):
            if prob == 0.0 or not all(safe[s] for s in states[1:]):
                continue
            for t in range(T - 1):
                total = total + prob * policy.score(states[t], actions[t])
    return total


def finite_diff_grad(
    objective: Callable[[np.ndarray], float], params, epsilon: float = 1e-5
) -> np.ndarray:
    """Central differences ``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    x0 = np.asarray(params, dtype=float).copy()
    grad = np.zeros_like(x0)
    for i in range(len(x0)):
        x = x0.copy()
        x[i] = x0[i] + epsilon
        f_plus = objective(x)
        x[i] = x0[i] - epsilon
        f_minus = objective(x)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"objective is not finite near coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2 * epsilon)
    return grad


def safety_objective(mdp: FiniteMdp, policy: TabularSoftmaxPolicy) -> Callable[[np.ndarray], float]:
    """Exact safety probability as a function of the flat logits."""
    return lambda flat: exact_safety_probability(mdp, policy.with_flat(flat))


def sample_trajectory(
    mdp: FiniteMdp, policy: TabularSoftmaxPolicy, rng: np.random.Generator, probs=None
) -> Trajectory:
    pi = policy.probs() if probs is None else probs
    states = [mdp.start_state]
    actions = []
    for _ in range(mdp.horizon):
        s = states[-1]
        a = int(rng.choice(mdp.n_actions, p=pi[s]))
        actions.append(a)
        states.append(int(rng.choice(mdp.n_states, p=mdp.transition[s, a])))
    return as_trajectory(mdp, states, actions)


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


def default_fixture(seed: int = 0) -> tuple[FiniteMdp, TabularSoftmaxPolicy]:
    """3 states (0 safe start, 1 safe, 2 unsafe absorbing), 2 actions, horizon 3."""
    rng = np.random.default_rng(seed)
    P = np.zeros((3, 2, 3))
    P[:2] = rng.dirichlet(np.ones(3), size=(2, 2))
    P[2, :, 2] = 1.0
    mdp = FiniteMdp(P, frozenset({0, 1}), start_state=0, horizon=3)
    return mdp, TabularSoftmaxPolicy(rng.normal(size=(3, 2)))


def random_fixture(seed: int) -> tuple[FiniteMdp, TabularSoftmaxPolicy]:
    """Random instance with 2-3 states, 2 actions, horizon 1-4 and a safe start."""
    rng = np.random.default_rng(seed)
    nS = int(rng.integers(2, 4))
    horizon = int(rng.integers(1, 5))
    P = rng.dirichlet(np.full(nS, 0.7), size=(nS, 2))
    unsafe = set(int(s) for s in rng.choice(np.arange(1, nS), size=int(rng.integers(1, nS)), replace=False))
    safe = frozenset(range(nS)) - unsafe
    mdp = FiniteMdp(P, safe, start_state=0, horizon=horizon)
    return mdp, TabularSoftmaxPolicy(rng.normal(size=(nS, 2)))


def two_state_chain() -> FiniteMdp:
    """State 0 safe, state 1 unsafe and absorbing; from 0 the single action stays with 0.9."""
    P = np.array([[[0.9, 0.1]], [[0.0, 1.0]]])
    return FiniteMdp(P, frozenset({0}), start_state=0, horizon=2)


# ---------------------------------------------------------------------------
# Plain-text format
# ---------------------------------------------------------------------------
#
#   states 3
#   actions 2
#   horizon 3
#   start 0
#   safe 0 1
#   transitions          # then S*A rows, row (s, a) lists P(. | s, a)
#   0.2 0.5 0.3
#   ...
#   logits               # optional, then S rows of A numbers


def parse_mdp(text: str) -> tuple[FiniteMdp, TabularSoftmaxPolicy | None]:
    header: dict[str, list[str]] = {}
    rows: dict[str, list[list[float]]] = {"transitions": [], "logits": []}
    block = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key in rows:
                block = key
                continue
            if key in ("states", "actions", "horizon", "start", "safe"):
                header[key] = rest
                block = None
                continue
            if block is None:
                raise ValueError(f"unexpected line {line!r}")
            rows[block].append([float(v) for v in line.split()])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    for key in ("states", "actions", "horizon", "start", "safe"):
        if key not in header:
            raise ValueError(f"missing '{key}' line")
    nS, nA = int(header["states"][0]), int(header["actions"][0])
    if len(rows["transitions"]) != nS * nA or any(len(r) != nS for r in rows["transitions"]):
        raise ValueError(f"expected {nS * nA} transition rows of {nS} values each")
    trans = np.array(rows["transitions"], dtype=float)
    if trans.shape != (nS * nA, nS):
        raise ValueError(f"expected {nS * nA} transition rows of {nS} values, got shape {trans.shape}")
    mdp = FiniteMdp(
        trans.reshape(nS, nA, nS),
        frozenset(int(s) for s in header["safe"]),
        start_state=int(header["start"][0]),
        horizon=int(header["horizon"][0]),
    )
    policy = None
    if rows["logits"]:
        logits = np.array(rows["logits"], dtype=float)
        if logits.shape != (nS, nA):
            raise ValueError(f"logits must be {nS}x{nA}, got {logits.shape}")
        policy = TabularSoftmaxPolicy(logits)
    return mdp, policy


def format_mdp(mdp: FiniteMdp, policy: TabularSoftmaxPolicy | None = None) -> str:
    lines = [
        f"states {mdp.n_states}",
        f"actions {mdp.n_actions}",
        f"horizon {mdp.horizon}",
        f"start {mdp.start_state}",
        "safe " + " ".join(str(s) for s in sorted(mdp.safe_set)),
        "transitions",
    ]
    for row in mdp.transition.reshape(-1, mdp.n_states):
        lines.append(" ".join(repr(float(p)) for p in row))
    if policy is not None:
        lines.append("logits")
        for row in policy.logits:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
