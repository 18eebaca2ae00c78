#!/usr/bin/env python3
"""
Main entry point for the LitePath command-line interface.

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from .app import LitePathApp
from .core.selector import SelectionConfig
from .services.pipeline import MODES

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    """Raised in place of argparse's own exit so the status stays 1."""


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--config",
        default="default",
        help="Configuration file, or a built-in name: default, desk (default: default)"
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Seed overriding the configuration"
    )
    parser.add_argument(
        "--output-dir",
        default=None,
        help="Output directory overriding the configuration"
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subcommand per stage.

    Returns:
        Configured parser
    """
    parser = CliParser(prog="litepath", description="LitePath: selective slide-level inference toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=CliParser)
    sub.required = True

    _common(sub.add_parser("gen", help="Generate the synthetic cohort"))
    _common(sub.add_parser("distill", help="Stage 1: multi-teacher distillation"))
    _common(sub.add_parser("train-mil", help="Stage 2: ABMIL training"))
    _common(sub.add_parser("train-aps", help="Stage 3: scorer training by score matching"))
    _common(sub.add_parser("grid", help="Search (k_u, k_a) on the validation split"))

    infer = sub.add_parser("infer", help="Run a pipeline mode over a cohort split")
    _common(infer)
    infer.add_argument("--mode", choices=MODES, default="litepath", help="Pipeline mode (default: litepath)")
    infer.add_argument("--ku", type=int, default=None, help="Uniform sample count (overrides the grid choice)")
    infer.add_argument("--ka", type=int, default=None, help="Attention sample count (overrides the grid choice)")
    infer.add_argument("--k", type=int, default=None, help="Patch count for the topk and uniform modes")
    infer.add_argument("--split", choices=("train", "val", "test", "all"), default="test",
                       help="Cohort split (default: test)")
    infer.add_argument("--out", default=None, help="Prediction file (default: predictions/<mode>.csv)")

    evaluate = sub.add_parser("eval", help="Macro-AUC with CI, optionally against a baseline")
    _common(evaluate)
    evaluate.add_argument("predictions", help="Prediction file to evaluate")
    evaluate.add_argument("--baseline", default=None, help="Baseline prediction file for the paired tests")

    score = sub.add_parser("dscore", help="D-Score and mean rank from a (model, cohort, auc, flops) table")
    _common(score)
    score.add_argument("--table", required=True, help="Delimited table of model, cohort, auc, flops")

    _common(sub.add_parser("flops", help="FLOPs breakdown, relative curve and competitor reductions"))

    bench = sub.add_parser("bench", help="Throughput on an in-memory dummy slide")
    _common(bench)
    bench.add_argument("--mode", choices=("litepath", "full", "both"), default="both",
                       help="Pipeline mode to time (default: both)")

    report = sub.add_parser("report", help="Summary report over prediction files")
    _common(report)
    report.add_argument("predictions", nargs="+", metavar="NAME=PATH",
                        help="Prediction files keyed by model name")

    return parser


def _selection(app, args) -> Optional[SelectionConfig]:
    if args.ku is None and args.ka is None:
        return None
    default = app.selection()
    return SelectionConfig(
        default.k_u if args.ku is None else args.ku,
        default.k_a if args.ka is None else args.ka,
    )


def _named_paths(items: List[str]):
    paths = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"expected NAME=PATH, got '{item}'")
        paths[name] = path
    return paths


def run_command(app, args) -> int:
    """Dispatch a parsed command to the application.

    Args:
        app: LitePathApp instance
        args: Parsed arguments
    """
    logger = logging.getLogger("litepath")
    command = args.command

    if command == "gen":
        splits = app.generate()
        logger.info(f"Generated {len(splits.all())} slides")
    elif command == "distill":
        app.distill()
    elif command == "train-mil":
        app.train_mil()
    elif command == "train-aps":
        app.train_aps()
    elif command == "grid":
        best = app.grid()
        print(json.dumps(best.to_dict(), sort_keys=True))
    elif command == "infer":
        _, path = app.infer(args.mode, _selection(app, args), args.k, args.split, args.out)
        print(path)
    elif command == "eval":
        print(json.dumps(app.evaluate(args.predictions, args.baseline), sort_keys=True, indent=2))
    elif command == "dscore":
        print(json.dumps(app.dscore(args.table), sort_keys=True, indent=2))
    elif command == "flops":
        record = app.flops()
        print(f"full encoder: {record['full_per_patch'] / 1e9:.2f}G FLOPs per patch "
              f"(pre-stage {record['breakdown']['pre_stage'] / 1e9:.3f}G, "
              f"asymptotic ratio {record['asymptotic_ratio']:.4f})")
        print(json.dumps(record, sort_keys=True, indent=2))
    elif command == "bench":
        modes = ("litepath", "full") if args.mode == "both" else (args.mode,)
        results = app.bench(modes)
        for mode, result in results.items():
            print(f"{mode}: {result.slides_per_hour:.1f} slides/hour (p50 {result.latency_p50:.4f}s)")
    elif command == "report":
        bundle = app.report(_named_paths(args.predictions))
        print(bundle.table.to_string(index=False))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    try:
        args = build_parser().parse_args(argv)
        if args.command == "report":
            _named_paths(args.predictions)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE

    try:
        app = LitePathApp(args.config, args.seed, args.output_dir)
    except Exception as e:
        print(f"Error: {str(e)}", file=sys.stderr)
        return EXIT_RUNTIME

    try:
        return run_command(app, args)
    except Exception as e:
        app.logger.error(f"Error running {args.command}: {str(e)}", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
