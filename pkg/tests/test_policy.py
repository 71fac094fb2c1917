import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safepg.checks import gaussian_score_error, random_gaussian_case
from safepg.oracle import finite_diff_grad
from safepg.policy import (
    LatticeSpec,
    PolicyParams,
    default_policy,
    features,
    log_prob,
    mean,
    sample,
    score,
    score_sum,
)


def single_kernel(coef=(0.0, 0.0), center=(2.0, 3.0), bandwidth=0.5, cov=(0.5, 0.5)):
    return PolicyParams(np.array([center]), bandwidth, np.array([coef]), np.array(cov))


def test_default_lattice():
    p = default_policy()
    assert p.n_kernels == 1681
    assert p.n_params == 3362
    xs = np.unique(p.centers[:, 0])
    assert len(xs) == 41
    np.testing.assert_allclose(np.diff(xs), 0.25)
    assert (xs[0], xs[-1]) == (0.0, 10.0)
    assert p.bandwidth == 0.5
    np.testing.assert_array_equal(p.covariance_diag, [0.5, 0.5])
    assert not np.any(p.coefficients)


def test_feature_examples():
    p = single_kernel()
    assert features(p, (2.0, 3.0))[0] == 1.0
    # |s - c| = bw * sqrt(2)
    off = 0.5 * math.sqrt(2)
    assert features(p, (2.0 + off, 3.0))[0] == pytest.approx(math.exp(-1), rel=1e-12)


@given(st.floats(-2, 12), st.floats(-2, 12))
def test_features_in_unit_interval_and_nearest_dominates(x, y):
    p = default_policy()
    phi = features(p, (x, y))
    assert np.all(phi <= 1.0) and np.all(phi >= 0.0)
    d = np.linalg.norm(p.centers - np.array([x, y]), axis=1)
    nearest = np.argmin(d)
    assert phi[nearest] == phi.max()


def test_features_strictly_positive_near_lattice():
    phi = features(default_policy(), (5.1, 4.9))
    assert np.all(phi > 0)


def test_mean_examples():
    assert np.array_equal(mean(default_policy(), (3.0, 3.0)), [0.0, 0.0])
    p = single_kernel(coef=(1.0, 2.0))
    np.testing.assert_allclose(mean(p, (2.0, 3.0)), [1.0, 2.0])


def test_mean_linear_in_coefficients():
    rng = np.random.default_rng(0)
    spec = LatticeSpec(n=5)
    c1, c2 = rng.normal(size=(25, 2)), rng.normal(size=(25, 2))
    s = (3.3, 6.1)
    lhs = mean(spec.build(c1 + c2), s)
    rhs = mean(spec.build(c1), s) + mean(spec.build(c2), s)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-13)


def test_sample_degenerate_covariance_is_mean():
    p = single_kernel(coef=(1.0, -2.0), cov=(1e-300, 1e-300))
    a = sample(p, (2.0, 3.0), np.random.default_rng(0))
    np.testing.assert_array_equal(a, mean(p, (2.0, 3.0)))


def test_sample_moments():
    p = single_kernel(coef=(1.0, -2.0))
    rng = np.random.default_rng(1)
    n = 100_000
    draws = np.array([sample(p, (2.2, 3.1), rng) for _ in range(n)])
    mu = mean(p, (2.2, 3.1))
    assert np.all(np.abs(draws.mean(axis=0) - mu) < 4 * math.sqrt(0.5 / n))
    np.testing.assert_allclose(draws.var(axis=0), [0.5, 0.5], rtol=0.05)


def test_log_prob_at_mean():
    p = single_kernel(coef=(1.0, 2.0))
    assert log_prob(p, (2.0, 3.0), (1.0, 2.0)) == pytest.approx(-math.log(math.pi), rel=1e-13)
    assert -math.log(math.pi) == pytest.approx(-1.14473, abs=1e-5)


def test_log_prob_translation_invariant():
    p = single_kernel(coef=(1.0, 2.0))
    shifted = single_kernel(coef=(1.7, 1.4))
    s = (2.0, 3.0)
    a = np.array([0.3, 2.9])
    delta = mean(shifted, s) - mean(p, s)
    assert log_prob(p, s, a) == pytest.approx(log_prob(shifted, s, a + delta), rel=1e-13)


def test_density_integrates_to_one():
    # quadrature oracle: midpoint rule over +-8 standard deviations
    p = single_kernel(coef=(1.0, -0.5), cov=(0.5, 0.3))
    mu = mean(p, (2.0, 3.0))
    h = 0.01
    gx = np.arange(mu[0] - 6, mu[0] + 6, h) + h / 2
    gy = np.arange(mu[1] - 5, mu[1] + 5, h) + h / 2
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    z = -0.5 * ((X - mu[0]) ** 2 / 0.5 + (Y - mu[1]) ** 2 / 0.3)
    # log_prob at one point fixes the normalizer; the rest differs only by the quadratic form
    offset = log_prob(p, (2.0, 3.0), mu)
    total = np.exp(z + offset).sum() * h * h
    assert abs(total - 1.0) < 1e-3
    assert log_prob(p, (2.0, 3.0), (gx[10], gy[20])) == pytest.approx(offset + z[10, 20], rel=1e-12)


def test_score_vanishes_at_mean():
    rng = np.random.default_rng(2)
    p = LatticeSpec(n=6).build(rng.normal(size=(36, 2)))
    s = (4.0, 4.4)
    assert not np.any(score(p, s, mean(p, s)))


def test_score_single_kernel_block():
    p = single_kernel()
    g = score(p, (2.0, 3.0), (0.1, 0.0))
    np.testing.assert_allclose(g, [0.2, 0.0], rtol=1e-12)
    fd = finite_diff_grad(lambda f: log_prob(p.with_flat(f), (2.0, 3.0), (0.1, 0.0)), p.flat, 1e-6)
    assert np.max(np.abs(fd - g)) / np.max(np.abs(g)) < 1e-6


def test_score_layout_matches_flat_parameters():
    rng = np.random.default_rng(3)
    p = LatticeSpec(n=3).build(rng.normal(size=(9, 2)))
    s, a = np.array([1.0, 2.0]), np.array([0.5, -1.0])
    g = score(p, s, a).reshape(-1, 2)
    phi = features(p, s)
    resid = (a - mean(p, s)) / p.covariance_diag
    for k in range(9):
        np.testing.assert_allclose(g[k], phi[k] * resid, rtol=1e-13)


def test_score_mean_zero_under_sampling():
    p = single_kernel(coef=(0.4, -0.2))
    rng = np.random.default_rng(4)
    s = (2.3, 2.9)
    n = 100_000
    g = np.array([score(p, s, sample(p, s, rng)) for _ in range(n)])
    se = g.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.linalg.norm(g.mean(axis=0)) < 4 * np.linalg.norm(se)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_score_matches_finite_differences(seed):
    err = gaussian_score_error(*random_gaussian_case(np.random.default_rng(seed)))
    assert err < 1e-5


def test_score_sum_matches_loop():
    rng = np.random.default_rng(5)
    p = LatticeSpec(n=4).build(rng.normal(size=(16, 2)))
    S = rng.uniform(0, 10, size=(7, 2))
    A = rng.normal(size=(7, 2))
    w = rng.normal(size=7)
    loop = sum(w[t] * score(p, S[t], A[t]) for t in range(7))
    np.testing.assert_allclose(score_sum(p, S, A, w), loop, rtol=1e-12, atol=1e-14)


def test_with_flat_roundtrip():
    p = default_policy()
    v = np.arange(p.n_params, dtype=float)
    q = p.with_flat(v)
    np.testing.assert_array_equal(q.flat, v)
    np.testing.assert_array_equal(q.coefficients[3], [6.0, 7.0])
    with pytest.raises(ValueError):
        p.with_flat(v[:-1])
