"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 verification assertion
failure, 3 run completed with divergent grid points.
"""

from __future__ import annotations

import argparse
import json
import sys

from .exceptions import ConfigError, MatSenseError
from .experiments import (cmd_best_rank, cmd_run, cmd_verify,
                          format_verify_report, load_config)
from .svgplot import plot_csvs


def _build_parser():
    # global options are accepted both before and after the subcommand;
    # SUPPRESS keeps the subparser from overwriting a value given up front
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", choices=["desk", "paper"],
                        default=argparse.SUPPRESS,
                        help="built-in config used when no config file is given")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads for grid points and checks")
    common.add_argument("--output-dir", default=argparse.SUPPRESS,
                        help="override the config's output directory")

    parser = argparse.ArgumentParser(
        prog="matsense", parents=[common],
        description="Incremental low-rank dynamics of gradient descent "
                    "on matrix sensing")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common],
                           help="execute the run grid of a config")
    p_run.add_argument("config", nargs="?", help="path to a config JSON file")

    p_verify = sub.add_parser("verify", parents=[common],
                              help="run a verification suite")
    p_verify.add_argument("config", nargs="?")
    p_verify.add_argument("--suite", default="all",
                          choices=["landscape", "sensing", "dynamics", "all"])

    p_plot = sub.add_parser("plot", parents=[common],
                            help="render trajectory CSVs as SVG")
    p_plot.add_argument("csv", nargs="+", help="trajectory CSV files")
    p_plot.add_argument("--kind", required=True,
                        choices=["rel_err", "singular_values", "distances"])
    p_plot.add_argument("--out", required=True, help="output SVG path")

    p_best = sub.add_parser("best-rank", parents=[common],
                            help="solve one best rank-s solution")
    p_best.add_argument("config", nargs="?")
    p_best.add_argument("--s", type=int, required=True)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    args.profile = getattr(args, "profile", None)
    args.threads = getattr(args, "threads", 1)
    args.output_dir = getattr(args, "output_dir", None)
    args.config = getattr(args, "config", None)
    try:
        if args.command == "plot":
            path = plot_csvs(args.csv, args.out, args.kind)
            print(f"wrote {path}")
            return 0

        cfg = load_config(path=args.config, profile=args.profile)
        if args.command == "run":
            result = cmd_run(cfg, threads=args.threads,
                             output_dir=args.output_dir)
            n = len(result.csv_paths)
            print(f"wrote {n} trajectory file(s) and {result.summary_path}")
            if result.any_diverged:
                print("warning: some runs diverged; see summary.json")
                return 3
            return 0
        if args.command == "verify":
            code, outcomes = cmd_verify(cfg, suite=args.suite,
                                        threads=args.threads)
            print(format_verify_report(outcomes))
            return code
        if args.command == "best-rank":
            sol, path = cmd_best_rank(cfg, args.s, output_dir=args.output_dir)
            print(json.dumps({"s": sol.s, "f_value": sol.f_value,
                              "grad_norm": sol.grad_norm,
                              "restart_spread": sol.restart_spread,
                              "path": str(path)}, sort_keys=True))
            return 0
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except MatSenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
