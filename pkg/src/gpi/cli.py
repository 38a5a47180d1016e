"""Command line entry point: ``gpi train | plan | verify-bounds | plot``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from gpi.config import RunConfig, load_config
from gpi.exceptions import ConfigurationError


def _add_config_flags(p):
    p.add_argument("--config", help="key = value file; flags below override it")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper(),
                       help=f"(default {getattr(RunConfig, f.name)!r})")
    # short aliases used in the docs
    p.add_argument("--steps", dest="total_steps", default=None, help=argparse.SUPPRESS)


def _cmd_train(args):
    from gpi.harness import train

    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name) is not None}
    config = load_config(args.config, overrides)
    run_dir = train(config, args.out, name=args.name, log_every=args.log_every)
    print(run_dir)
    return 0


def _cmd_plan(args):
    from gpi.harness import format_plan_table, plan_table, write_plan_csv

    kappas = [float(k) for k in args.kappa.split(",")] if args.kappa else [i / 10 for i in range(11)]
    rows = plan_table(args.B, kappas, args.n, args.eps)
    print(f"B = {args.B}")
    print(format_plan_table(rows))
    if args.csv:
        write_plan_csv(args.csv, rows)
    return 0


def _cmd_verify(args):
    from gpi.certify import certify_bounds, certify_mixture_penalty, format_failures

    results = certify_bounds(args.instances, args.seed) + [certify_mixture_penalty(max(1, args.instances // 2), args.seed)]
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(format_failures(failed), file=sys.stderr)
    return 1 if failed else 0


def _cmd_plot(args):
    from gpi.harness import plot_runs

    runs = [Path(r) for r in args.runs if (Path(r) / "metrics.csv").exists()]
    if not runs:
        raise ConfigurationError("no run directories with metrics.csv given")
    print(plot_runs(runs, args.out, args.metric))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gpi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent and write a run directory")
    _add_config_flags(p)
    p.add_argument("--out", default="runs")
    p.add_argument("--name", help="run directory name (default derived from the config)")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("plan", help="optimal mixture weights over a kappa sweep")
    p.add_argument("--B", type=int, default=2)
    p.add_argument("--kappa", help="comma-separated values (default 0, 0.1, ..., 1)")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--csv", help="also write the table to this CSV file")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("verify-bounds", help="certify the improvement bounds on random tabular MDPs")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("plot", help="plot training curves of run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default="curves.png")
    p.add_argument("--metric", default="mean_return")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
