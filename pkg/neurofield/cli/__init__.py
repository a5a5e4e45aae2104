#!/usr/bin/env python3
"""
Command line surface for neurofield.

Subcommands: simulate, meanfield, compare, sweep, check. Exit codes:
0 success, 1 unexpected error, 2 configuration error, 3 numerical failure
(including identity checks outside tolerance).
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from neurofield import __version__
from neurofield.cli.commands import (
    Context,
    cmd_check,
    cmd_compare,
    cmd_meanfield,
    cmd_simulate,
    cmd_sweep,
    load_compare_inputs,
)
from neurofield.services.config import config_hash, load_config
from neurofield.services.errors import ConfigurationError, NumericalFailure
from neurofield.services.model import build_model
from neurofield.services.paths import TimeGrid
from neurofield.services.storage import RunRecorder
from neurofield.services.streams import WorkerPool

logger = logging.getLogger("neurofield")

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML or JSON configuration document")
    common.add_argument("--seed", type=int, default=None, help="Master seed (overrides run.seed)")
    common.add_argument("--out", type=Path, default=Path("runs/latest"), help="Output directory")
    common.add_argument("--threads", type=int, default=None, help="Worker threads (overrides run.threads)")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Dotted-path override, e.g. coupling.mean.J0=0.5 (repeatable)",
    )
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors")

    parser = argparse.ArgumentParser(
        prog="neurofield",
        description="Simulate spatially extended random neural networks and their mean-field limit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python -m neurofield simulate --config configs/default.yaml --out runs/sim
  python -m neurofield meanfield --config configs/default.yaml --threads 4 --out runs/mf
  python -m neurofield compare --ensemble-a runs/sim/ensemble.csv --ensemble-b runs/mf/ensemble.csv
  python -m neurofield sweep --kind chaos --set run.chaos_replicates=50
  python -m neurofield check --seed 7
        """,
    )
    parser.add_argument("--version", action="version", version=f"neurofield {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", parents=[common], help="Simulate one finite network")
    simulate.add_argument("--neurons", type=int, default=None, help="Network size (overrides run.n_neurons)")
    simulate.add_argument("--binary", action="store_true", help="Also write the compact .nfe ensemble")

    meanfield = sub.add_parser("meanfield", parents=[common], help="Solve the mean-field fixed point")
    meanfield.add_argument("--downsample", type=int, default=1, help="Keep every K-th particle in ensemble.csv")

    compare = sub.add_parser("compare", parents=[common], help="Compare two stored ensembles")
    compare.add_argument("--ensemble-a", type=Path, required=True, help="First ensemble (.csv or .nfe)")
    compare.add_argument("--ensemble-b", type=Path, required=True, help="Second ensemble (.csv or .nfe)")

    sweep = sub.add_parser("sweep", parents=[common], help="Run a finite-size sweep")
    sweep.add_argument(
        "--kind", choices=["convergence", "chaos", "regularity"], required=True, help="Which sweep to run"
    )

    sub.add_parser("check", parents=[common], help="Check the exact Gaussian and Girsanov identities")
    return parser


def setup_logging(quiet: bool) -> None:
    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    logging.getLogger().setLevel(logging.WARNING if quiet else logging.INFO)


def run(args: argparse.Namespace) -> int:
    """Validate, prepare the run directory, dispatch. Raises on failure."""
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    config = load_config(args.config, overrides)
    params = build_model(config)
    grid = TimeGrid.from_params(params)
    threads = args.threads if args.threads is not None else config.run.threads
    if threads < 1:
        raise ConfigurationError(f"--threads must be >= 1, got {threads}")
    if args.command == "meanfield" and args.downsample < 1:
        raise ConfigurationError(f"--downsample must be >= 1, got {args.downsample}")
    if args.command == "simulate" and args.neurons is not None and args.neurons < 1:
        raise ConfigurationError(f"--neurons must be >= 1, got {args.neurons}")

    digest = config_hash(config)
    seed = config.run.seed
    logger.info(f"{args.command}: seed={seed} config={digest[:8]} grid={grid.to_dict()} threads={threads}")

    with WorkerPool(threads) as pool:
        ctx = Context(config=config, config_hash=digest, params=params, grid=grid, seed=seed, pool=pool)
        ensembles = load_compare_inputs(args, ctx) if args.command == "compare" else None

        recorder = RunRecorder(args.out, args.command, config.model_dump(mode="json"), digest, seed)
        recorder.prepare()
        if args.command == "simulate":
            return cmd_simulate(args, ctx, recorder)
        if args.command == "meanfield":
            return cmd_meanfield(args, ctx, recorder)
        if args.command == "compare":
            return cmd_compare(args, ctx, recorder, ensembles)
        if args.command == "sweep":
            return cmd_sweep(args, ctx, recorder)
        return cmd_check(args, ctx, recorder)


def main(argv: Optional[List[str]] = None) -> int:
    """CLI entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.quiet)

    try:
        return run(args)
    except (ConfigurationError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NumericalFailure as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
