"""Command-line entry point: ``riftlab <command> ...``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import experiments as ex
from .intervention import QGap, intervention_rate
from .mdp import uniform_policy
from .rift import evaluate_policy
from .theory import run_verification


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="run a single seed instead of the configured list")
    common.add_argument("--out", default=None, help="output directory (default: $RIFT_LAB_OUT or ./results)")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes across sweep cells")

    p = argparse.ArgumentParser(prog="riftlab", description="Tabular e-stop fine-tuning experiments.")
    sub = p.add_subparsers(dest="command", metavar="command")
    v = sub.add_parser("verify", parents=[common], help="run the identity and gradient checks")
    v.add_argument("--quick", action="store_true", help="fewer instances per check")
    for name, text in (("solve", "solve the expert and report prior quality"),
                       ("train", "one training run"),
                       ("sweep", "full (omega, B, seed) sweep with CSV reports"),
                       ("failure-cases", "the three no-benefit scenarios"),
                       ("calibrate", "choose Q-gap thresholds and the demo budget")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("config", help="TOML experiment config")
        if name == "train":
            s.add_argument("--omega", type=float, default=None)
            s.add_argument("--B", type=float, default=None)
        if name == "failure-cases":
            s.add_argument("--B", type=float, default=None, help="threshold (default: middle of B_list)")
    return p


def _load(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _out(args):
    return args.out if args.out is not None else ex.default_out_dir()


def cmd_verify(args) -> int:
    results = run_verification(quick=args.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_solve(args) -> int:
    cfg = _load(args)
    env = ex.build_environment(cfg)
    mdp = env.mdp
    kw = dict(episodes=cfg.eval_episodes, max_horizon=cfg.max_horizon, success_threshold=cfg.success_threshold)
    print(f"states={mdp.num_states} actions={mdp.num_actions} gamma={mdp.discount:g}")
    print(f"expert   success={evaluate_policy(mdp, env.expert_policy, **kw).success_rate:.3f}")
    print(f"uniform  success={evaluate_policy(mdp, uniform_policy(mdp.num_states, mdp.num_actions), **kw).success_rate:.3f}")
    for B in cfg.B_list:
        prior = ex.build_prior(cfg, B)
        rate = intervention_rate(mdp, prior, QGap(env.expert_q, B), cfg.eval_episodes, cfg.max_horizon, 0)
        print(f"prior[{cfg.prior.kind}] B={B:g} success={evaluate_policy(mdp, prior, **kw).success_rate:.3f} "
              f"intervention_rate={rate:.3f}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    omega = cfg.omega if args.omega is None else args.omega
    B = cfg.B_list[0] if args.B is None else args.B
    rows = []
    for seed in cfg.seeds:
        rows += ex.run_cell(cfg, omega, B, seed)
    print("run_id round success_rate mean_return intervention_rate kl_to_prior dataset_size")
    for r in rows:
        print(f"{r.run_id} {r.round} {r.success_rate:.3f} {r.mean_return:.3f} {r.intervention_rate:.3f} "
              f"{r.kl_to_prior:.4f} {r.dataset_size}")
    if args.out is not None:
        ex.report(ex.SweepResult(rows), args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    result = ex.run_experiment(cfg, jobs=args.jobs)
    for path in ex.report(result, _out(args)):
        print(path)
    return 0


def cmd_failure_cases(args) -> int:
    cfg = _load(args)
    B = sorted(cfg.B_list)[len(cfg.B_list) // 2] if args.B is None else args.B
    results = ex.failure_cases(cfg, B, jobs=args.jobs)
    for c in results:
        print(c.line())
    return 0 if all(c.passed for c in results) else 1


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    try:
        n, sr = ex.calibrate_prior_demos(cfg)
        print(f"prior demos={n} success={sr:.3f}")
        cal = ex.calibrate_thresholds(cfg)
    except ex.CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 1
    for band in ("high", "med", "low"):
        print(f"B_{band}={cal.thresholds[band]:.6g} rlif_success={cal.success[band]:.3f}")
    return 0


COMMANDS = {"verify": cmd_verify, "solve": cmd_solve, "train": cmd_train, "sweep": cmd_sweep,
            "failure-cases": cmd_failure_cases, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (ex.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
