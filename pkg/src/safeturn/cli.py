"""Command-line front end: ``safeturn {train,eval,baseline,budget}``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .config import ConfigError, RunConfig, load_config
from .guarantees import BudgetError
from .network import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_SAFETY = 0, 2, 3
PAPER_SCALE = (20_000, 1_000)


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int, help="training episodes or evaluation trials")
    p.add_argument("--reward", choices=("braking", "margin"))
    p.add_argument("--z", type=float, help="timeout penalty of the margin reward")
    p.add_argument("--k", type=float, help="shield sigma multiple")
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--paper-scale", action="store_true",
                   help="20,000 training episodes and 1,000 evaluation trials")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safeturn",
                                     description="Prediction-shielded DQN at an unsigned T-junction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a shielded DQN and write train.csv + checkpoint.npz")
    _run_options(p)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a policy over independent trials")
    _run_options(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--policy", choices=("greedy", "random", "wait"), default="greedy")

    p = sub.add_parser("baseline", help="fixed-margin rule-based sweep")
    _run_options(p)
    p.add_argument("--margins", type=float, nargs="+", help="extra margins in meters")

    p = sub.add_parser("budget", help="print the Chebyshev safety budget table")
    p.add_argument("sigma_M", type=float)
    p.add_argument("sigma_c", type=float)
    p.add_argument("k", type=float)
    p.add_argument("kappa_c", type=float)
    p.add_argument("m", type=int)
    p.add_argument("delta", type=float)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    cfg.mode = args.command
    if args.paper_scale:
        cfg.episodes, cfg.eval_episodes = PAPER_SCALE
    overrides = {"seed": args.seed, "reward": args.reward, "z": args.z, "k": args.k}
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.episodes is not None:
        if args.command == "train":
            cfg.episodes = args.episodes
        else:
            cfg.eval_episodes = args.episodes
    if args.output_dir is not None:
        cfg.output_dir = str(args.output_dir)
    cfg.validate()
    return cfg


def _print_summary(summary: harness.EvalSummary) -> None:
    for name, value in summary.rows():
        print(f"{name:<14}{value}")
    print("histogram of d (timeouts at -1):")
    for lo, hi, count in summary.histogram:
        label = "timeout" if lo == harness.TIMEOUT_D else f"[{lo:g}, {hi:g})"
        print(f"  {label:<10}{count}")


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)

    def progress(ep, m):
        if not args.quiet and (ep + 1) % 100 == 0:
            print(f"episode {ep + 1}/{cfg.episodes} outcome={m.outcome} d={m.d:.2f} "
                  f"braking={m.braking}", flush=True)

    res = harness.train(cfg, out, progress)
    print(f"wrote {res.csv_path} and {res.checkpoint}")
    print("collisions 0")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    if args.policy == "greedy":
        if args.checkpoint is None:
            raise ConfigError("eval --policy greedy needs --checkpoint")
        factory = harness.greedy_factory(harness.load_policy_net(args.checkpoint))
    elif args.policy == "random":
        factory = harness.random_factory(cfg.seed)
    else:
        factory = harness.wait_factory()
    _, summary = harness.evaluate(cfg, factory, None, cfg.output_dir, "eval")
    _print_summary(summary)
    return EXIT_OK


def cmd_baseline(args, cfg: RunConfig) -> int:
    points = harness.baseline_sweep(cfg, args.margins, None, cfg.output_dir)
    print("margin  mean_d  mean_braking  timeout_rate")
    for p in points:
        s = p.summary
        print(f"{p.margin:6g}  {s.mean_d:6.2f}  {s.mean_braking:12.3f}  {s.timeout_rate:12.3f}")
    return EXIT_OK


def cmd_budget(args) -> int:
    b = harness.budget(args.sigma_M, args.sigma_c, args.k, args.kappa_c, args.m, args.delta)
    print(b.table())
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "budget":
            return cmd_budget(args)
        cfg = resolve_config(args)
        return {"train": cmd_train, "eval": cmd_eval, "baseline": cmd_baseline}[args.command](args, cfg)
    except (ConfigError, CheckpointError, BudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.SafetyViolation as exc:
        print(f"SAFETY VIOLATION: {exc}", file=sys.stderr)
        if exc.dump is not None:
            print(f"forensic dump: {exc.dump}", file=sys.stderr)
        return EXIT_SAFETY


if __name__ == "__main__":
    sys.exit(main())
