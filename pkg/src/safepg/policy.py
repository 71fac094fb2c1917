"""Gaussian policy whose mean is a linear combination of RBF features.

``mu(s) = sum_k theta_k * exp(-|s - c_k|^2 / (2 bw^2))`` with one 2-vector
``theta_k`` per kernel and a fixed diagonal covariance. The flat parameter
vector is ``coefficients.ravel()``: kernel ``k`` owns entries ``2k`` and ``2k+1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LatticeSpec:
    """Hyperparameters that rebuild a policy: square lattice, bandwidth, covariance."""

    lo: float = 0.0
    hi: float = 10.0
    n: int = 41
    bandwidth: float = 0.5
    covariance: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("lattice needs at least one point per axis")
        if self.n > 1 and not self.hi > self.lo:
            raise ValueError("lattice hi must exceed lo")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if len(self.covariance) != 2 or min(self.covariance) <= 0:
            raise ValueError("covariance must be two positive entries")
        object.__setattr__(self, "covariance", tuple(float(c) for c in self.covariance))

    def centers(self) -> np.ndarray:
        axis = np.linspace(self.lo, self.hi, self.n)
        xs, ys = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([xs.ravel(), ys.ravel()])

    def build(self, coefficients: np.ndarray | None = None) -> "PolicyParams":
        centers = self.centers()
        if coefficients is None:
            coefficients = np.zeros_like(centers)
        return PolicyParams(
            centers=centers,
            bandwidth=self.bandwidth,
            coefficients=np.asarray(coefficients, dtype=float).reshape(-1, 2),
            covariance_diag=np.asarray(self.covariance, dtype=float),
        )


@dataclass(frozen=True, eq=False)
class PolicyParams:
    centers: np.ndarray
    bandwidth: float
    coefficients: np.ndarray
    covariance_diag: np.ndarray

    def __post_init__(self) -> None:
        centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        coefficients = np.asarray(self.coefficients, dtype=float).reshape(-1, 2)
        cov = np.asarray(self.covariance_diag, dtype=float).reshape(2)
        if len(coefficients) != len(centers):
            raise ValueError(
                f"{len(coefficients)} coefficient pairs for {len(centers)} kernel centers"
            )
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if np.any(cov <= 0):
            raise ValueError("covariance entries must be positive")
        for arr in (centers, coefficients, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "covariance_diag", cov)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        # The kernel factorizes per axis; lattices share few distinct coordinates.
        for axis, name in ((0, "_x"), (1, "_y")):
            uniq, inv = np.unique(centers[:, axis], return_inverse=True)
            object.__setattr__(self, name, (uniq, inv.ravel()))

    @property
    def n_kernels(self) -> int:
        return len(self.centers)

    @property
    def n_params(self) -> int:
        return 2 * len(self.centers)

    @property
    def flat(self) -> np.ndarray:
        return self.coefficients.ravel()

    def with_flat(self, vector: np.ndarray) -> "PolicyParams":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {vector.shape}")
        return PolicyParams(self.centers, self.bandwidth, vector.reshape(-1, 2), self.covariance_diag)

    # Method forms so estimators can treat Gaussian and tabular policies alike.
    def score(self, state, action) -> np.ndarray:
        return score(self, state, action)

    def log_prob(self, state, action) -> float:
        return log_prob(self, state, action)


def default_policy() -> PolicyParams:
    """Zero-coefficient policy on the 41x41 lattice over [0, 10]^2."""
    return LatticeSpec().build()


def features(params: PolicyParams, state) -> np.ndarray:
    """RBF activations; a ``(n, 2)`` batch of states gives an ``(n, d)`` array."""
    s = np.asarray(state, dtype=float)
    scale = -0.5 / params.bandwidth**2
    ux, ix = params._x
    uy, iy = params._y
    # far-away (diverged) states underflow to zero features; callers check finiteness
    with np.errstate(over="ignore"):
        ex = np.exp(scale * (s[..., 0, None] - ux) ** 2)
        ey = np.exp(scale * (s[..., 1, None] - uy) ** 2)
    return ex[..., ix] * ey[..., iy]


def mean(params: PolicyParams, state) -> np.ndarray:
    return features(params, state) @ params.coefficients


def sample(params: PolicyParams, state, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(2)
    return mean(params, state) + np.sqrt(params.covariance_diag) * z


def log_prob(params: PolicyParams, state, action) -> float:
    """Bivariate normal log-density with the standard ``(2 pi)^(D/2) |Sigma|^(1/2)`` normalizer."""
    r = np.asarray(action, dtype=float) - mean(params, state)
    cov = params.covariance_diag
    return float(-0.5 * np.sum(r * r / cov) - 0.5 * np.sum(np.log(cov)) - LOG_2PI)


def score(params: PolicyParams, state, action) -> np.ndarray:
    """Gradient of :func:`log_prob` with respect to the flat coefficient vector."""
    phi = features(params, state)
    w = (np.asarray(action, dtype=float) - phi @ params.coefficients) / params.covariance_diag
    return np.outer(phi, w).ravel()


def score_sum(params: PolicyParams, states, actions, weights=None) -> np.ndarray:
    """``sum_t weights[t] * score(states[t], actions[t])`` in one batched pass."""
    states = np.asarray(states, dtype=float).reshape(-1, 2)
    actions = np.asarray(actions, dtype=float).reshape(-1, 2)
    phi = features(params, states)
    w = (actions - phi @ params.coefficients) / params.covariance_diag
    with np.errstate(over="ignore", invalid="ignore"):
        if weights is not None:
            w = w * np.asarray(weights, dtype=float)[:, None]
        return (phi.T @ w).ravel()
