"""Command-line entry point: ``pinch-secure <command> --config scene.json --out result.csv``.

Exit codes: 0 on success, 2 for configuration or output errors, 3 when every
optimizer run of the command failed in the solver.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from .bcd_driver import SCHEMES, RunOptions
from .config import get_settings
from .experiments import ExperimentError, ExperimentSpec, run_experiment
from .geometry import GeometryError, ScenarioError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

# Subcommand -> experiment kind
_KINDS = {
    "bound": "bound",
    "optimize": "convergence",
    "sweep-power": "power_sweep",
    "sweep-kappa": "kappa_sweep",
    "snapshot": "snapshot",
}

_DEFAULT_REALIZATIONS = {"bound": 1, "optimize": 1, "snapshot": 1}


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers, got '{text}'") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pinch-secure",
        description="Robust secure beamforming and PA placement for pinching-antenna downlinks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("bound", "Eavesdropper channel error bound against sampled errors"),
        ("optimize", "Run the BCD on one scene and write its trace"),
        ("sweep-power", "Sum rate per scheme over the total power budget"),
        ("sweep-kappa", "Sum rate per scheme over the user CSI error level"),
        ("snapshot", "Optimized PA layout, power ratios and blockages"),
    ):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", type=Path, required=True, help="Scenario JSON file")
        s.add_argument("--out", type=Path, required=True, help="Output CSV path")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--realizations", type=int, default=None)
        s.add_argument(
            "--scheme", action="append", choices=SCHEMES, default=None,
            help="Scheme to run; repeat for several (default: Proposed)",
        )
        s.add_argument("--grid", type=_floats, default=None,
                       help="Comma-separated sweep values (dBm, kappa^2, or location error in m)")
        s.add_argument("--arc-grid", type=_floats, default=None, help="Heading errors in degrees (bound)")
        s.add_argument("--samples", type=int, default=None, help="Monte Carlo draws per bound point")
        s.add_argument("--random-scenes", action="store_true",
                       help="Draw users and blockages per realization from the config's sampling block")
        s.add_argument("--max-iter", type=int, default=None, help="BCD iteration cap")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--verbose", "-v", action="store_true")
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    options = RunOptions(seed=args.seed)
    if args.max_iter is not None:
        options = options.model_copy(update={"max_iter": args.max_iter})
    fields = {
        "kind": _KINDS[args.command],
        "scenario": args.config,
        "out": args.out,
        "seed": args.seed,
        "realizations": args.realizations or _DEFAULT_REALIZATIONS.get(args.command, 20),
        "random_scenes": args.random_scenes,
        "workers": args.workers,
        "options": options,
    }
    if args.scheme:
        fields["schemes"] = args.scheme
    if args.grid is not None:
        fields["grid"] = args.grid
    if args.arc_grid is not None:
        fields["arc_grid_deg"] = args.arc_grid
    if args.samples is not None:
        fields["samples"] = args.samples
    return ExperimentSpec(**fields)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    level = logging.DEBUG if args.verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    try:
        spec = spec_from_args(args)
        outcome = run_experiment(spec)
    except (ScenarioError, GeometryError, ValidationError, ExperimentError, ValueError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_CONFIG

    if outcome.all_failed:
        logger.error(f"{args.command}: all {outcome.runs} optimizer runs failed")
        return EXIT_SOLVER
    if outcome.failures:
        logger.warning(f"{args.command}: {outcome.failures} of {outcome.runs} runs failed")
    logger.info(f"{args.command}: wrote {outcome.path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
