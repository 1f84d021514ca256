#!/usr/bin/env python
"""Directly executable benchmark runner for the coordinate-update solvers."""

import argparse
import logging
import sys

import crayons

from confighandler import ConfigHandler
from errors import ConfigError, TecuError
from experiment import enhance_image, run_experiment, validate_experiment
from interface import SolverCallbacks
from utils import past_time_formatter

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2

handler = logging.StreamHandler()
formatter = logging.Formatter("%(asctime)s %(name)-6s %(levelname)-8s %(message)s")
handler.setFormatter(formatter)


class ConsoleCallbacks(SolverCallbacks):
    """Print a status line per finished solve."""

    def __init__(self) -> None:
        self.label = ""
        self.fallbacks = 0
        super().__init__()

    def on_start(self, problem_name, label):
        self.label = label
        self.fallbacks = 0

    def on_block_update(self, iteration, block, outcome):
        pass

    def on_iteration(self, record):
        pass

    def on_fallback(self, iteration, block, message):
        self.fallbacks += 1

    def on_stop(self, result):
        details = (
            f"{result.outer_iterations} iterations, {result.total_inner_steps} propagations, "
            f"Ψ={result.final_objective:.6e}, {past_time_formatter(result.wall_time_s)}"
        )
        if self.fallbacks:
            details += f", {self.fallbacks} fallbacks"
        if result.converged:
            print("{} {} ({})".format(crayons.green("✔ "), crayons.green(self.label), details))
        else:
            print("{} {} ({})".format(crayons.red("✖ "), crayons.red(self.label), details))
        if result.descent_violations:
            print(crayons.yellow(f"   sufficient descent violated at iterations {result.descent_violations}"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Benchmark runner for two-block coordinate-update solvers")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug output of every iteration")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run every configured solver for every seed")
    run.add_argument("config", help="path to the configuration TOML file")

    validate = commands.add_parser("validate", help="check the task's gradient and prox oracles")
    validate.add_argument("config", help="path to the configuration TOML file")
    validate.add_argument("--samples", type=int, default=10, help="number of random sample points")

    enhance = commands.add_parser("enhance", help="brighten a low-light PGM/PPM image")
    enhance.add_argument("input", help="input PGM/PPM path")
    enhance.add_argument("output", help="output PGM/PPM path")
    enhance.add_argument("--alpha", type=float, default=0.1, help="illumination smoothness weight")
    enhance.add_argument("--solver", default="TECU", help="TECU, TECU-3-5, PALM or CD")
    enhance.add_argument("--gamma", type=float, default=0.45, help="illumination gamma correction")
    return parser


def run(args) -> int:
    config = ConfigHandler(args.config).experiment
    print(
        "{} {} solvers x {} seeds on task {}\n".format(
            crayons.blue("➜ "), len(config.solvers), len(config.seeds), config.task
        )
    )
    summaries = run_experiment(config, ConsoleCallbacks(), progress=not args.verbose)
    converged = sum(summary.converged for summary in summaries)
    print(f"\n{converged} of {len(summaries)} runs converged, results in {config.output_dir}")
    return EXIT_OK


def validate(args) -> int:
    config = ConfigHandler(args.config).experiment
    report = validate_experiment(config, args.samples)
    for check in report.checks:
        mark = crayons.green("✔ ") if check.passed else crayons.red("✖ ")
        print(f"{mark} {check.name}: {check.detail}")
    return EXIT_OK if report.passed else EXIT_RUNTIME_ERROR


def enhance(args) -> int:
    enhance_image(
        args.input, args.output, alpha=args.alpha, solver=args.solver, gamma=args.gamma, callbacks=ConsoleCallbacks()
    )
    print(f"enhanced image written to {args.output}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    root = logging.getLogger()
    if handler not in root.handlers:
        root.addHandler(handler)
    root.setLevel(logging.DEBUG if args.verbose else logging.WARNING)

    commands = {"run": run, "validate": validate, "enhance": enhance}
    try:
        return commands[args.command](args)
    except ConfigError as error:
        print(crayons.red(f"Configuration error: {error}"), file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (TecuError, OSError) as error:
        print(crayons.red(f"Run failed: {error}"), file=sys.stderr)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
