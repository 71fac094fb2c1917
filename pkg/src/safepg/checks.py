"""Gradient verification suite behind ``safepg check-gradients``.

Every check compares two independent routes to the same number and reports
the worst error over its instances together with the seed that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from safepg import oracle
from safepg.gradients import GradientEstimate, constraint_grad_estimate
from safepg.policy import PolicyParams, log_prob, score

Estimator = Callable[..., GradientEstimate]

FD_EPS = 1e-5
FD_REL_TOL = 1e-6
FD_ABS_FLOOR = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    passed: bool
    worst_seed: int
    instances: int


def fd_relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """Max-abs error relative to the exact gradient's norm; 0/0 counts as 0."""
    err = float(np.max(np.abs(approx - exact))) if len(exact) else 0.0
    scale = float(np.linalg.norm(exact))
    if scale == 0.0:
        return 0.0 if err <= FD_ABS_FLOOR else float("inf")
    return err / scale


def fd_within(approx: np.ndarray, exact: np.ndarray, rel: float = FD_REL_TOL) -> bool:
    return float(np.max(np.abs(approx - exact))) <= rel * float(np.linalg.norm(exact)) + FD_ABS_FLOOR


def _summarize(name, errors, seeds, tol, passed) -> CheckResult:
    worst = int(np.argmax(errors))
    return CheckResult(name, float(errors[worst]), tol, all(passed), seeds[worst], len(seeds))


def check_theorem_fd(seeds) -> CheckResult:
    errors, ok = [], []
    for seed in seeds:
        mdp, pol = oracle.random_fixture(seed)
        exact = oracle.exact_constraint_grad(mdp, pol)
        fd = oracle.finite_diff_grad(oracle.safety_objective(mdp, pol), pol.flat, FD_EPS)
        errors.append(fd_relative_error(fd, exact))
        ok.append(fd_within(fd, exact))
    return _summarize("safety gradient vs finite differences", errors, list(seeds), FD_REL_TOL, ok)


def check_recursion(seeds, tol: float = 1e-10) -> CheckResult:
    errors = []
    for seed in seeds:
        mdp, pol = oracle.random_fixture(seed)
        exact = oracle.exact_constraint_grad(mdp, pol)
        errors.append(float(np.max(np.abs(oracle.exact_constraint_grad_recursive(mdp, pol) - exact))))
    return _summarize("backward recursion vs enumeration", errors, list(seeds), tol,
                      [e <= tol for e in errors])


def check_unrolled(seeds, tol: float = 1e-10) -> CheckResult:
    errors = []
    for seed in seeds:
        mdp, pol = oracle.random_fixture(seed)
        exact = oracle.exact_constraint_grad(mdp, pol)
        errors.append(float(np.max(np.abs(oracle.lemma2_unrolled_grad(mdp, pol) - exact))))
    return _summarize("unrolled boundary form vs enumeration", errors, list(seeds), tol,
                      [e <= tol for e in errors])


def estimator_expectation(mdp, pol, estimator: Estimator = constraint_grad_estimate) -> np.ndarray:
    """Exact expectation of a per-episode estimator: probability-weighted sum over all paths."""
    total = np.zeros(pol.n_params)
    for traj, prob in oracle.iter_weighted_trajectories(mdp, pol):
        if prob:
            total += prob * estimator(traj, pol).vector
    return total


def check_estimator_expectation(seeds, tol: float = 1e-12,
                                estimator: Estimator = constraint_grad_estimate) -> CheckResult:
    errors = []
    for seed in seeds:
        mdp, pol = oracle.random_fixture(seed)
        exact = oracle.exact_constraint_grad(mdp, pol)
        errors.append(float(np.max(np.abs(estimator_expectation(mdp, pol, estimator) - exact))))
    return _summarize("estimator expectation vs exact gradient", errors, list(seeds), tol,
                      [e <= tol for e in errors])


def monte_carlo_zscores(episodes: int, seed: int = 0, fixture_seed: int = 0,
                        estimator: Estimator = constraint_grad_estimate) -> np.ndarray:
    """Per-coordinate ``(sample mean - exact) / standard error`` on the default fixture."""
    mdp, pol = oracle.default_fixture(fixture_seed)
    exact = oracle.exact_constraint_grad(mdp, pol)
    rng = np.random.default_rng(seed)
    probs = pol.probs()
    samples = np.stack([
        estimator(oracle.sample_trajectory(mdp, pol, rng, probs), pol).vector for _ in range(episodes)
    ])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(episodes)
    diff = mean - exact
    z = np.zeros_like(diff)
    nz = se > 0
    z[nz] = diff[nz] / se[nz]
    # zero-variance coordinates must then match exactly
    z[~nz & (np.abs(diff) > 1e-12)] = np.inf
    return z


def check_monte_carlo(episodes: int = 20_000, seed: int = 0,
                      estimator: Estimator = constraint_grad_estimate) -> CheckResult:
    z = np.abs(monte_carlo_zscores(episodes, seed, estimator=estimator))
    worst = float(z.max())
    return CheckResult("Monte-Carlo mean within 4 standard errors", worst, 4.0, worst < 4.0, seed, episodes)


def random_gaussian_case(rng: np.random.Generator):
    """Random small RBF policy with a state and action near its kernels."""
    d = int(rng.integers(1, 26))
    centers = rng.uniform(0, 10, size=(d, 2))
    params = PolicyParams(
        centers=centers,
        bandwidth=float(rng.uniform(0.3, 2.0)),
        coefficients=rng.normal(scale=3.0, size=(d, 2)),
        covariance_diag=rng.uniform(0.1, 2.0, size=2),
    )
    state = centers[rng.integers(d)] + rng.normal(scale=0.5, size=2)
    action = rng.normal(scale=3.0, size=2)
    return params, state, action


def gaussian_score_error(params: PolicyParams, state, action, eps: float = FD_EPS) -> float:
    analytic = score(params, state, action)
    fd = oracle.finite_diff_grad(lambda flat: log_prob(params.with_flat(flat), state, action),
                                 params.flat, eps)
    return float(np.max(np.abs(fd - analytic)) / max(np.max(np.abs(analytic)), 1e-12))


def check_gaussian_score(n: int = 100, seed: int = 0, tol: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    errors = [gaussian_score_error(*random_gaussian_case(rng)) for _ in range(n)]
    return _summarize("Gaussian score vs finite differences", errors, list(range(n)), tol,
                      [e < tol for e in errors])


def run_suite(n_fixtures: int = 20, mc_episodes: int = 20_000,
              estimator: Estimator = constraint_grad_estimate) -> list[CheckResult]:
    seeds = range(n_fixtures)
    return [
        check_theorem_fd(seeds),
        check_recursion(seeds),
        check_unrolled(seeds),
        check_estimator_expectation(seeds, estimator=estimator),
        check_monte_carlo(mc_episodes, estimator=estimator),
        check_gaussian_score(),
    ]


def perturbed_estimator(trajectory, policy) -> GradientEstimate:
    """Negative control: the true estimator scaled by 1.01."""
    est = constraint_grad_estimate(trajectory, policy)
    return GradientEstimate(1.01 * est.vector, est.episodes_used)
