"""

Copyright (c) 2024 The uwbslam Project

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
"""
import argparse
import logging
import sys
from typing import List, Optional, Sequence

from ..config._constants import PRESETS
from ..utils import get_version_pep440_compliant, set_log_level
from ._experiment import (experiment_to_ini, generate, load_experiment, parse_overrides, recompute_metrics,
                          run_experiment, run_sweep)
from ._plotdata import emit_plot_data

__all__ = ["build_parser", "main", "EXIT_OK", "EXIT_ERROR"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 2


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", help="INI experiment file (sections: scenario, noise, search, "
                                               "estimator, pcm, dpgo, network, pipeline, experiment)")
    parser.add_argument("-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; applied after the config file")
    parser.add_argument("--print-config", action="store_true",
                        help="print the resolved configuration as INI and exit")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwbslam",
                                     description="Distributed multi-robot SLAM from UWB ranging and odometry.")
    parser.add_argument("--version", action="version", version=get_version_pep440_compliant())
    verbs = parser.add_subparsers(dest="verb", metavar="VERB")
    verbs.required = True

    gen = verbs.add_parser("generate", help="simulate a scenario and write it as a dataset file")
    _common(gen)
    gen.add_argument("-o", "--output", help="dataset path (default: <output_dir>/dataset.txt)")

    run = verbs.add_parser("run", help="run the pipeline on a simulated scenario or a dataset file")
    _common(run)
    run.add_argument("-d", "--dataset", help="dataset file to replay instead of simulating")
    run.add_argument("-o", "--output", help="output directory (default: experiment.output_dir)")

    sweep = verbs.add_parser("sweep", help="run a preset parameter sweep over all seeds")
    _common(sweep)
    sweep.add_argument("-p", "--preset", choices=sorted(PRESETS), help="preset (default: experiment.preset)")
    sweep.add_argument("-o", "--output", help="output directory (default: experiment.output_dir)")

    metrics = verbs.add_parser("metrics", help="recompute the metrics of a finished run")
    metrics.add_argument("run_dir")
    metrics.add_argument("--log-level", default=None)

    plot = verbs.add_parser("plot-data", help="aggregate sweep and landscape CSVs into plot-ready files")
    plot.add_argument("directory")
    plot.add_argument("-p", "--preset", action="append", choices=sorted(PRESETS), default=None)
    plot.add_argument("--log-level", default=None)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.verb == "metrics":
        report = recompute_metrics(args.run_dir)
        sys.stdout.write(report.to_text())
        return EXIT_OK
    if args.verb == "plot-data":
        for path in emit_plot_data(args.directory, args.preset):
            sys.stdout.write(path + "\n")
        return EXIT_OK

    overrides = parse_overrides(args.set)
    if getattr(args, "dataset", None):
        overrides["scenario.dataset"] = args.dataset
    if getattr(args, "output", None) and args.verb != "generate":
        overrides["experiment.output_dir"] = args.output
    cfg = load_experiment(args.config, overrides)
    if args.print_config:
        sys.stdout.write(experiment_to_ini(cfg))
        return EXIT_OK
    if args.verb == "generate":
        sys.stdout.write(generate(cfg, args.output) + "\n")
    elif args.verb == "run":
        report, _ = run_experiment(cfg)
        sys.stdout.write(report.to_text())
    elif args.verb == "sweep":
        sys.stdout.write(run_sweep(cfg, args.preset) + "\n")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Command-line entry point. Returns the exit status: 0 on success, 2 on any
    configuration, input or computation error (reported as one line on stderr).
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as err:
        return int(err.code or 0) if err.code in (0, None) else EXIT_ERROR
    if args.log_level:
        try:
            set_log_level(args.log_level)
        except ValueError:
            sys.stderr.write(f"uwbslam: unknown log level {args.log_level!r}\n")
            return EXIT_ERROR
    try:
        return _dispatch(args)
    except (ValueError, LookupError, IOError) as err:
        logger.debug("command failed", exc_info=True)
        sys.stderr.write(f"uwbslam: error: {err}\n")
        return EXIT_ERROR
    except ChildProcessError as err:
        sys.stderr.write(f"uwbslam: error: {err.__cause__ or err}\n")
        return EXIT_ERROR
