"""Command-line experiment runner.

Subcommands: simulate, verify-family, kw, optimize, reproduce-example and
sweep-rho. Flags override values of the JSON config file.
"""

import argparse
import asyncio
import json
import os
import sys
from typing import Any, Dict, List, Optional

from nlkw_lab.core import converter
from nlkw_lab.core.entities import ExperimentConfig
from nlkw_lab.repositories import config, log, logic

COMMANDS = (
    "simulate",
    "verify-family",
    "kw",
    "optimize",
    "reproduce-example",
    "sweep-rho",
)


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Path to a JSON experiment config")
    parser.add_argument("--out", help="Output directory (default: NLKW_OUTPUT_DIR)")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--paths", type=int, help="Number of Monte Carlo paths")
    parser.add_argument("--steps", type=int, help="Number of grid steps")
    parser.add_argument("--rho", type=float, help="Correlation between W and W1")
    parser.add_argument(
        "--family",
        choices=("linear", "exp", "exp-as-printed"),
        help="Martingale family",
    )
    parser.add_argument(
        "--threads", type=int, help="Worker threads (overrides NLKW_THREADS)"
    )
    parser.add_argument(
        "--quiet", action="store_true", help="Do not log to the console"
    )


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(
        prog="nlkw",
        description="Monte Carlo lab for nonlinear stochastic integrals and the generalized Kunita-Watanabe decomposition",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "Simulate paths, dump them and report terminal moments",
        "verify-family": "Check martingale property, representation and derivatives of a family",
        "kw": "Analytic and regression Kunita-Watanabe decomposition of the payoff",
        "optimize": "Build the optimal strategy and report objective and orthogonality",
        "reproduce-example": "Full pipeline on the worked example, including the representation ladder",
        "sweep-rho": "KW floor and optimal objective over a list of correlations",
    }
    for command in COMMANDS:
        _add_common_arguments(subparsers.add_parser(command, help=helps[command]))
    return parser.parse_args(argv)


def apply_args_to_env(args: argparse.Namespace) -> None:
    """Apply command line arguments to environment variables (args take priority)"""
    if args.threads is not None:
        os.environ["NLKW_THREADS"] = str(args.threads)
    if args.out:
        os.environ["NLKW_OUTPUT_DIR"] = args.out


def build_experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: Dict[str, Any] = {
        "master_seed": args.seed,
        "n_paths": args.paths,
        "n_steps": args.steps,
        "rho": args.rho,
        "family": args.family,
    }
    if args.command == "reproduce-example":
        overrides["payoff"] = "example"
    return config.apply_overrides(config.load_config(args.config), overrides)


async def run_command(command: str, experiment: ExperimentConfig, out_dir: str) -> str:
    """Run one subcommand and return its markdown report"""
    if command == "simulate":
        return converter.convert_simulate_to_markdown(
            await logic.simulate(experiment, out_dir)
        )
    if command == "verify-family":
        return converter.convert_family_to_markdown(
            await logic.verify_family(experiment, out_dir)
        )
    if command == "kw":
        return converter.convert_kw_to_markdown(await logic.kw(experiment, out_dir))
    if command == "optimize":
        return converter.convert_summary_to_markdown(
            await logic.run_pipeline(experiment, out_dir, represent=False)
        )
    if command == "reproduce-example":
        return converter.convert_summary_to_markdown(
            await logic.run_pipeline(experiment, out_dir, represent=True)
        )
    if command == "sweep-rho":
        return converter.convert_sweep_report_to_markdown(
            await logic.sweep_rho(experiment, out_dir)
        )
    raise ValueError(f"unknown command {command}")


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point; returns the process exit code.
    """
    args = parse_args(argv)
    apply_args_to_env(args)
    config.reset_settings()
    settings = config.get_settings()
    log.init_logger(
        log_to_console=not args.quiet,
        enable_file_log=settings.enable_file_logging,
        log_dir=settings.log_dir,
    )

    try:
        experiment = build_experiment_config(args)
        out_dir = args.out or experiment.output_dir or settings.output_dir
        report = asyncio.run(run_command(args.command, experiment, out_dir))
    except Exception as e:
        print(json.dumps(logic.error_report(e)), file=sys.stderr)
        return logic.exit_code_for(e)

    print(report)
    return logic.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
