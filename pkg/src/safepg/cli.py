"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 gradient-check failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from safepg import checks, io as sio, rng as rngmod
from safepg.navenv import default_world, rollout
from safepg.trainer import RunConfig, evaluation_stats, lambda_sweep, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("safepg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    changes = {}
    for flag, attr in (("seed", "seed"), ("episodes", "episodes"), ("cadence", "cadence"),
                       ("parallel", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[attr] = value
    return replace(config, **changes) if changes else config


def _run_training(config: RunConfig, out: Path, run_id: str) -> tuple[object, object]:
    """Train into ``out``: resolved config, metrics, timing, periodic and final checkpoints."""
    ckdir = out / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.ini").write_text(sio.format_config(config), encoding="utf-8")
    t0 = time.perf_counter()

    with sio.CsvSink(out / "metrics.csv", sio.METRICS_HEADER) as metrics, \
            sio.CsvSink(out / "timing.csv", ("episode", "wall_clock_seconds")) as timing:
        def on_checkpoint(row, params):
            ckpt = sio.Checkpoint(config.policy, params.flat, episode=row.episode, seed=config.seed)
            sio.save_checkpoint(ckdir / f"ep_{row.episode:08d}.ckpt", ckpt)
            metrics.write((run_id, row.episode, config.lam, config.step_size,
                           row.avg_cumulative_reward, row.safety_probability,
                           row.constraint_grad_norm, row.value_grad_norm))
            timing.write((row.episode, round(time.perf_counter() - t0, 3)))

        params, history = train(config, on_checkpoint=on_checkpoint)
    sio.save_checkpoint(out / "final.ckpt",
                        sio.Checkpoint(config.policy, params.flat, episode=config.episodes, seed=config.seed))
    return params, history


def cmd_train(args) -> int:
    try:
        config = _apply_overrides(sio.load_config(args.config), args)
    except (sio.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    try:
        _run_training(config, out, run_id=args.run_id or f"lambda={config.lam:g}")
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FloatingPointError, ValueError) as exc:
        print(f"training failed: {exc}; last checkpoint kept in {out / 'checkpoints'}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        ckpt = sio.load_checkpoint(args.checkpoint)
        world = sio.load_config(args.config).world if args.config else default_world()
    except (sio.CheckpointError, sio.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, sio.ConfigError) else EXIT_RUNTIME
    if args.episodes < 1:
        print("error: --episodes must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        stats = evaluation_stats(ckpt.params(), world, args.episodes, args.seed)
    except (FloatingPointError, ValueError) as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"safety_probability    {stats.safety_probability:.4f} +/- {stats.safety_se:.4f}")
    print(f"avg_cumulative_reward {stats.avg_cumulative_reward:.4f} +/- {stats.reward_se:.4f}")
    print(f"mean_final_distance   {stats.mean_final_distance:.4f}")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    sio.write_csv(out / "eval.csv",
                  ("episodes", "seed", "safety_probability", "safety_se", "avg_cumulative_reward",
                   "reward_se", "mean_final_distance"),
                  [(stats.episodes, args.seed, stats.safety_probability, stats.safety_se,
                    stats.avg_cumulative_reward, stats.reward_se, stats.mean_final_distance)])
    return EXIT_OK


def _parse_lambdas(text: str) -> list[float]:
    values = [float(v) for v in text.replace(" ", "").split(",") if v]
    if not values or any(not (math.isfinite(v) and v >= 0) for v in values):
        raise ValueError(f"invalid lambda list {text!r}")
    return values


def cmd_sweep(args) -> int:
    try:
        config = _apply_overrides(sio.load_config(args.config), args)
        lambdas = _parse_lambdas(args.lambdas)
    except (sio.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def run(cfg: RunConfig):
        return _run_training(cfg, out / f"lambda_{cfg.lam:g}", run_id=f"lambda={cfg.lam:g}")

    rows = lambda_sweep(config, lambdas, run=run)
    table = []
    for row in rows:
        s = row.stats
        if s is None:
            table.append((row.lam, row.status, "", "", "", "", "", row.error))
        else:
            table.append((row.lam, row.status, s.safety_probability, s.avg_cumulative_reward,
                          s.safety_se, s.reward_se, s.mean_final_distance, ""))
        print(f"lambda={row.lam:g} {row.status}"
              + (f" safety={s.safety_probability:.3f} reward={s.avg_cumulative_reward:.2f}" if s else ""))
    sio.write_csv(out / "summary.csv", sio.SUMMARY_HEADER, table)
    return EXIT_RUNTIME if all(r.status != "ok" for r in rows) else EXIT_OK


def cmd_check_gradients(args) -> int:
    estimator = checks.perturbed_estimator if args.perturb_estimator else checks.constraint_grad_estimate
    results = checks.run_suite(args.fixtures, args.mc_episodes, estimator=estimator)
    print(f"{'check':<45} {'max error':>12} {'tolerance':>10} {'worst seed':>10}  result")
    for r in results:
        print(f"{r.name:<45} {r.max_error:>12.3e} {r.tolerance:>10.1e} {r.worst_seed:>10}  "
              f"{'PASS' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    if failed:
        for r in failed:
            print(f"FAILED: {r.name} (instance seed {r.worst_seed})", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_demo_world(args) -> int:
    world = default_world()
    out = Path(args.out)
    try:
        params = sio.load_checkpoint(args.checkpoint).params() if args.checkpoint else None
    except sio.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    rows = [("bounds_lo", *world.bounds_lo, ""), ("bounds_hi", *world.bounds_hi, ""),
            ("start", *world.start, ""), ("goal", *world.goal, "")]
    rows += [("obstacle", c[0], c[1], r) for c, r in world.obstacles]
    try:
        sio.write_csv(out, ("kind", "x", "y", "radius"), rows)
        if params is not None:
            traj = rollout(world, params, rngmod.stream(args.seed, rngmod.DEMO, 0))
            sio.write_csv(out.with_name(out.stem + "_trajectory.csv"), ("t", "x", "y", "safe"),
                          [(t, float(s[0]), float(s[1]), int(f))
                           for t, (s, f) in enumerate(zip(traj.states, traj.safe_flags))])
    except OSError as exc:
        print(f"cannot write {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="safepg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("--cadence", type=int)
        p.add_argument("--parallel", type=int, metavar="WORKERS",
                       help="rollout worker threads (results match sequential mode)")

    p = sub.add_parser("train", help="train one policy")
    run_flags(p)
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="take the world from this config instead of the default")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate one policy per lambda")
    run_flags(p)
    p.add_argument("--lambdas", required=True, help="comma-separated, e.g. 0.5,6,14")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check-gradients", help="run the exact-oracle gradient checks")
    p.add_argument("--fixtures", type=int, default=20)
    p.add_argument("--mc-episodes", type=int, default=20_000)
    p.add_argument("--perturb-estimator", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check_gradients)

    p = sub.add_parser("demo-world", help="export world geometry (and a sampled trajectory) as CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo_world)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
