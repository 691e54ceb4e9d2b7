# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""
Run multitask QSAR benchmark experiments
usage: mtqsar [-h] [--verbose | --quiet] COMMAND ...

commands:
  synth       write the configured synthetic collection as assay CSV files
  featurize   load and fingerprint the datasets of an experiment
  split       split every task according to the configured regime
  train       train the configured model family
  eval        evaluate the trained models
  run         featurize, split, train and evaluate
  compare     paired comparison of two finished runs
  analyze     relatedness, size-benefit or covariate-shift analysis
  report      summary table of comparison CSV files

Examples

mtqsar run --config wmtnn.json --jobs 4
mtqsar compare runs/wmtnn runs/stnn --out compare.csv
mtqsar analyze covariate-shift runs/leaky runs/kfold --out shift
mtqsar report compare.csv --runs runs/wmtnn --out table.csv
"""

from typing import Any, Callable, Dict, List, Optional, Sequence
import argparse
import logging
import sys

from colorama import Fore, Style, init

from .experiment_api import Experiment
from .qsarerror import ConfigError, NumericError, QSARError, TrainingError
from .stats import DEFAULT_ALPHA
from .studies import ANALYSES

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

STAGES = ("synth", "featurize", "split", "train", "eval", "run")


def exit_code(error: QSARError) -> int:
    """Exit code for an error category"""
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (NumericError, TrainingError)):
        return EXIT_NUMERIC
    return EXIT_DATA


class ColorFormatter(logging.Formatter):
    """Prints warnings and errors in colour"""

    COLORS = {logging.WARNING: Fore.LIGHTYELLOW_EX, logging.ERROR: Fore.LIGHTRED_EX,
              logging.CRITICAL: Fore.LIGHTRED_EX}

    def format(self, record: logging.LogRecord) -> str:
        text = super().format(record)
        color = self.COLORS.get(record.levelno)
        if color:
            return color + text + Style.RESET_ALL
        return text


def setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.INFO
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(ColorFormatter("  %(levelname)s %(name)s: %(message)s"))
    logging.basicConfig(level=level, handlers=[handler], force=True)


def parse_commandline(argv: Optional[Sequence[str]] = None) -> Any:
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(
        prog="mtqsar",
        description="Run multitask QSAR benchmark experiments"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="show debug output")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="show warnings and errors only")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--config", required=True, help="experiment configuration (JSON)")
    experiment.add_argument("--seed", type=int, help="master seed, overrides the configuration")
    experiment.add_argument("--jobs", type=int, help="number of parallel jobs")
    experiment.add_argument("--out", help="output directory, overrides the configuration")

    commands.add_parser("synth", parents=[experiment],
                        help="write the configured synthetic collection as assay CSV files")
    commands.add_parser("featurize", parents=[experiment], help="load and fingerprint the datasets")
    commands.add_parser("split", parents=[experiment], help="split every task")
    commands.add_parser("train", parents=[experiment], help="train the configured model family")
    commands.add_parser("eval", parents=[experiment], help="evaluate the trained models")
    commands.add_parser("run", parents=[experiment], help="featurize, split, train and evaluate")

    compare = commands.add_parser("compare", help="paired comparison of two finished runs")
    compare.add_argument("run_a", help="run directory of model A")
    compare.add_argument("run_b", help="run directory of model B")
    compare.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="significance level")
    compare.add_argument("--out", help="comparison CSV to write")

    analyze = commands.add_parser("analyze", help="dataset analyses")
    analyze.add_argument("which", choices=ANALYSES, help="the analysis to run")
    analyze.add_argument("runs", nargs="+", help="run directories")
    analyze.add_argument("--tau", type=float, default=0.5, help="similarity threshold of the relatedness metric")
    analyze.add_argument("--jobs", type=int, help="number of parallel jobs")
    analyze.add_argument("--out", help="output directory")

    report = commands.add_parser("report", help="summary table of comparison CSV files")
    report.add_argument("comparisons", nargs="+", help="comparison CSV files")
    report.add_argument("--runs", nargs="*", default=[], help="runs providing the median AUC of model A")
    report.add_argument("--out", required=True, help="summary CSV to write")

    return parser.parse_args(argv)


def _experiment_command(args: Any) -> None:
    if args.jobs is not None and args.jobs < 1:
        raise ConfigError(message="--jobs must be >= 1", code="InvalidConfig")
    if args.command == "synth":
        experiment = Experiment.from_file(args.config, seed=args.seed, jobs=args.jobs)
        paths = experiment.synthesize(args.out)
        print("  Wrote " + str(len(paths)) + " synthetic tasks")
        return
    experiment = Experiment.from_file(args.config, seed=args.seed, out=args.out, jobs=args.jobs)
    stages: Dict[str, Callable[[], Any]] = {
        "featurize": experiment.featurize,
        "split": experiment.split,
        "train": experiment.train,
        "eval": experiment.evaluate,
        "run": experiment.run,
    }
    stages[args.command]()
    print("  Run directory: " + experiment.run_dir)


def main(argv: Optional[List[str]] = None) -> int:
    """Main method"""
    init()
    args = parse_commandline(argv)
    setup_logging(args.verbose, args.quiet)

    try:
        if args.command in STAGES:
            _experiment_command(args)
        elif args.command == "compare":
            result = Experiment().compare_runs(args.run_a, args.run_b, args.alpha, args.out)
            verdict = {"a": "favours " + result.model_a, "b": "favours " + result.model_b,
                       None: "indistinguishable"}[result.favors]
            print("  %s vs %s: k=%d n=%d interval=(%.2f, %.2f) %s"
                  % (result.model_a, result.model_b, result.k, result.n, result.ci[0], result.ci[1], verdict))
        elif args.command == "analyze":
            for path in Experiment(jobs=args.jobs).analyze(args.runs, args.which, args.out, args.tau):
                print("  Wrote " + path)
        else:
            print("  Wrote " + Experiment().report(args.comparisons, args.out, args.runs))
    except QSARError as error:
        print(Fore.LIGHTRED_EX + "  ERROR: " + str(error) + Style.RESET_ALL, file=sys.stderr)
        return exit_code(error)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
