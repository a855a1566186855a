"""Command-line interface.

    bnn-distill run --config FILE [--seed N] [--out DIR] [--set sec.key=val ...]
    bnn-distill emit-grid --checkpoint FILE --out grid.csv [--lo L --hi H --resolution N]
    bnn-distill compare [alias=]metrics.csv ... [--assert EXPR ...] [--out table.csv]

Exit codes: 0 ok, 1 assertion failed, 2 configuration/usage error,
3 diverged chain.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .experiments import compare_runs, emit_grid, run_experiment
from .samplers import DivergedChainError

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnn-distill",
                                     description="Train, sample, and distill small Bayesian nets.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment from a config file")
    run_p.add_argument("--config", required=True, help="key = value config file")
    run_p.add_argument("--seed", type=int, default=None, help="override the master seed")
    run_p.add_argument("--out", default=None, help="override the output directory")
    run_p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override any config value")

    grid_p = sub.add_parser("emit-grid", help="evaluate a stored classifier on a 2-D grid")
    grid_p.add_argument("--checkpoint", required=True, help=".params or .ensemble file")
    grid_p.add_argument("--out", required=True, help="output CSV path")
    grid_p.add_argument("--lo", type=float, default=-10.0)
    grid_p.add_argument("--hi", type=float, default=10.0)
    grid_p.add_argument("--resolution", type=int, default=100)
    grid_p.add_argument("--no-figure", action="store_true", help="skip the PNG render")

    cmp_p = sub.add_parser("compare", help="tabulate shared metrics across runs")
    cmp_p.add_argument("files", nargs="+", metavar="[ALIAS=]METRICS_CSV")
    cmp_p.add_argument("--assert", dest="assertions", action="append", default=[],
                       metavar="EXPR", help="e.g. 'sgld.test_loglik > sgd.test_loglik'")
    cmp_p.add_argument("--out", default=None, help="also write the table as CSV")
    return parser


def _named_files(items: list[str]) -> list[tuple[str, str]]:
    named = []
    for i, item in enumerate(items):
        if "=" in item:
            alias, path = item.split("=", 1)
        else:
            alias, path = chr(ord("a") + i), item
        named.append((alias, path))
    return named


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, overrides=args.overrides,
                              seed=args.seed, out_dir=args.out)
            code = run_experiment(cfg)
            print(f"wrote {cfg.out_dir}/metrics.csv")
            return code
        if args.command == "emit-grid":
            emit_grid(args.checkpoint, args.out, (args.lo, args.hi), (args.lo, args.hi),
                      args.resolution, render=not args.no_figure)
            print(f"wrote {args.out}")
            return EXIT_OK
        if args.command == "compare":
            text, ok = compare_runs(_named_files(args.files), args.assertions, args.out)
            print(text)
            return EXIT_OK if ok else EXIT_ASSERTION
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"config error: missing file: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedChainError as e:
        print(f"runtime divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
