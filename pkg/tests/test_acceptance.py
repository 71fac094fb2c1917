"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured value and
the tolerance it is held to; the lines are repeated in the terminal summary.
The training criteria (7 to 9) take several minutes and carry the ``slow`` mark.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from safepg import checks, io as sio, oracle
from safepg.gradients import constraint_grad_estimate
from safepg.navenv import Trajectory
from safepg.policy import LatticeSpec
from safepg.trainer import evaluation_stats, train

from conftest import ACCEPTANCE_LINES

FIXTURES = range(20)
FIG1 = sio.load_config("configs/fig1.ini")
SWEEP = (0.5, 6.0, 14.0)


def report(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def test_criterion_01_safety_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    res = checks.check_theorem_fd(FIXTURES)
    elapsed = time.perf_counter() - t0
    ok = res.passed and res.max_error < 1e-6 and elapsed < 10
    assert report(1, ok, f"max rel err {res.max_error:.2e} < 1e-6 over {res.instances} fixtures, {elapsed:.2f}s < 10s")


def test_criterion_02_recursion_matches_enumeration():
    t0 = time.perf_counter()
    res = checks.check_recursion(FIXTURES, tol=1e-10)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 10
    assert report(2, ok, f"max abs err {res.max_error:.2e} <= 1e-10, {elapsed:.2f}s < 10s")


def test_criterion_03_estimator_expectation_is_exact():
    res = checks.check_estimator_expectation(FIXTURES, tol=1e-12)
    assert report(3, res.passed, f"max abs err {res.max_error:.2e} <= 1e-12 over {res.instances} fixtures")


def test_criterion_04_monte_carlo_within_four_standard_errors():
    t0 = time.perf_counter()
    z = np.abs(checks.monte_carlo_zscores(100_000, seed=0))
    elapsed = time.perf_counter() - t0
    ok = bool(z.max() < 4.0) and elapsed < 60
    assert report(4, ok, f"max |z| {z.max():.2f} < 4 with 1e5 episodes, {elapsed:.1f}s < 60s")


def test_criterion_05_unsafe_trajectories_give_exact_zero():
    rng = np.random.default_rng(0)
    params = LatticeSpec(n=5).build(rng.normal(size=(25, 2)))
    nonzero = 0
    for _ in range(10_000):
        T = int(rng.integers(1, 21))
        flags = rng.random(T + 1) < 0.8
        flags[0] = True
        if flags[1:].all():
            flags[rng.integers(1, T + 1)] = False
        traj = Trajectory(rng.uniform(0, 10, (T + 1, 2)), rng.normal(size=(T, 2)),
                          -rng.uniform(0, 100, T + 1), flags)
        nonzero += bool(np.any(constraint_grad_estimate(traj, params).vector))
    assert report(5, nonzero == 0, f"{nonzero} nonzero vectors out of 10000 unsafe trajectories")


def test_criterion_06_gaussian_score_matches_finite_differences():
    res = checks.check_gaussian_score(100, seed=0, tol=1e-5)
    assert report(6, res.passed, f"max rel err {res.max_error:.2e} < 1e-5 over 100 triples")


_runs = {}


def _trained(lam):
    """Train once per lambda; criteria 7 and 8 share the lambda = 6 run."""
    if lam not in _runs:
        cfg = replace(FIG1, lam=lam, workers=4)
        params, _ = train(cfg)
        _runs[lam] = evaluation_stats(params, cfg.world, 1000, cfg.seed, workers=4)
    return _runs[lam]


@pytest.mark.slow
def test_criterion_07_navigation_policy_reaches_goal_safely():
    s = _trained(6.0)
    ok = s.mean_final_distance < 2.0 and s.safety_probability >= 0.8
    assert report(7, ok, f"final distance {s.mean_final_distance:.3f} < 2.0, "
                         f"safety {s.safety_probability:.3f} >= 0.8, reward {s.avg_cumulative_reward:.2f}")


@pytest.mark.slow
def test_criterion_08_lambda_trend():
    stats = [_trained(lam) for lam in SWEEP]
    lines, ok = [], True
    for (la, a), (lb, b) in zip(zip(SWEEP, stats), zip(SWEEP[1:], stats[1:])):
        safety_slack = 2 * np.hypot(a.safety_se, b.safety_se)
        reward_slack = 2 * np.hypot(a.reward_se, b.reward_se)
        ok &= b.safety_probability >= a.safety_probability - safety_slack
        ok &= b.avg_cumulative_reward <= a.avg_cumulative_reward + reward_slack
        lines.append(f"lambda {la:g}->{lb:g}: safety {a.safety_probability:.3f}->{b.safety_probability:.3f} "
                     f"(slack {safety_slack:.3f}), reward {a.avg_cumulative_reward:.1f}->"
                     f"{b.avg_cumulative_reward:.1f} (slack {reward_slack:.1f})")
    assert report(8, ok, "; ".join(lines))


@pytest.mark.slow
def test_criterion_09_metrics_csv_is_deterministic(tmp_path):
    from safepg.cli import main

    cfg = tmp_path / "run.ini"
    cfg.write_text(sio.format_config(replace(FIG1, episodes=2000, cadence=500)))
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["train", "--config", str(cfg), "--out", str(o)]) for o in outs]
    a, b = ((o / "metrics.csv").read_bytes() for o in outs)
    ok = codes == [0, 0] and a == b and a.count(b"\n") == 5
    assert report(9, ok, f"two sequential runs, metrics.csv {len(a)} bytes, identical={a == b}")


def test_criterion_10_roundtrips_and_negative_control():
    rng = np.random.default_rng(0)
    ck = sio.Checkpoint(LatticeSpec(), rng.normal(size=3362), episode=40000, seed=0)
    data = sio.encode_checkpoint(ck)
    ckpt_ok = sio.encode_checkpoint(sio.decode_checkpoint(data)) == data
    text = sio.format_config(FIG1)
    config_ok = sio.format_config(sio.parse_config(text)) == text
    control = checks.run_suite(5, 2000, estimator=checks.perturbed_estimator)
    control_fails = not all(r.passed for r in control)
    genuine = checks.run_suite(5, 2000)
    genuine_passes = all(r.passed for r in genuine)
    ok = ckpt_ok and config_ok and control_fails and genuine_passes
    assert report(10, ok, f"checkpoint roundtrip={ckpt_ok}, config roundtrip={config_ok}, "
                          f"perturbed estimator fails={control_fails}, genuine passes={genuine_passes}")


def test_oracle_fixture_matches_declared_limits():
    for seed in FIXTURES:
        mdp, _ = oracle.random_fixture(seed)
        assert mdp.n_states <= 3 and mdp.n_actions == 2 and mdp.horizon <= 4
