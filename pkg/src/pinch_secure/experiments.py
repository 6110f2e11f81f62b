"""Experiment families at desk scale, written as plot-ready CSV.

Every command draws realization i with seed ``spec.seed + i``; realizations
may run in worker processes, and rows are merged back in seed order.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from .bcd_driver import (
    RESULT_FIELDS,
    SCHEMES,
    RunOptions,
    RunResult,
    default_layout,
    result_row,
    run_baseline,
)
from .beamforming_opt import OptimizationError
from .channel import channel_table, ea_channel
from .config import Settings, get_settings
from .geometry import Scenario, load_scenario, load_scenario_config, sample_random_scenario
from .rates import ea_bound_radius
from .uncertainty import empirical_error, linear_baseline_bound

logger = logging.getLogger(__name__)

BOUND_FIELDS = (
    "sweep", "pos_err_m", "arc_err_deg", "eavesdropper", "bound_proposed", "bound_linear",
    "err_max", "err_mean", "bound_proposed_norm", "bound_linear_norm", "err_max_norm", "err_mean_norm",
)
CONVERGENCE_FIELDS = ("seed", "scheme", "bcd_iter", "block", "objective", "leak_margin", "wall_ms")
SUMMARY_FIELDS = ("scheme", "p_max_dbm", "kappa2", "mean_sum_rate", "mean_leak_max", "realizations", "failures")
SNAPSHOT_FIELDS = ("kind", "index", "n", "m", "x_m", "y_m", "z_m", "p_nm", "x1_m", "y1_m", "height_m")
POSITION_FIELDS = ("bcd_iter", "stage", "n", "m", "x_m", "p_nm")
CHANNEL_FIELDS = ("receiver", "n", "m", "t", "re", "im", "gain", "distance")

_DEFAULT_GRIDS = {
    "bound": [0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
    "power_sweep": [10.0, 20.0, 30.0],
    "kappa_sweep": [0.01, 0.05, 0.1, 0.2],
}


class ExperimentError(Exception):
    """Experiment could not run or write its output."""
    pass


class ExperimentSpec(BaseModel):
    """One experiment: what to run, on which scene, over which grid, written where.

    ``grid`` holds P_max in dBm for power sweeps, kappa^2 for kappa sweeps and the
    location error in meters for the bound experiment, whose heading sweep uses
    ``arc_grid_deg``.
    """
    kind: Literal["bound", "convergence", "power_sweep", "kappa_sweep", "snapshot"]
    scenario: Path
    out: Path
    grid: List[float] = Field(default_factory=list)
    arc_grid_deg: List[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    realizations: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)
    schemes: List[str] = Field(default_factory=lambda: ["Proposed"])
    random_scenes: bool = False
    samples: Optional[int] = Field(None, ge=1, description="Monte Carlo draws per bound grid point")
    workers: int = Field(1, ge=1)
    options: RunOptions = Field(default_factory=RunOptions)

    @model_validator(mode="after")
    def _check(self):
        if not self.grid and self.kind in _DEFAULT_GRIDS:
            self.grid = list(_DEFAULT_GRIDS[self.kind])
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ValueError(f"Unknown schemes {unknown}; expected {list(SCHEMES)}")
        if not self.schemes:
            raise ValueError("At least one scheme is required")
        return self

    @classmethod
    def from_json(cls, path: Path) -> "ExperimentSpec":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class ExperimentOutcome:
    """Rows written by a command and how many optimizer runs failed."""
    path: Path
    rows: List[Dict[str, Any]]
    runs: int = 0
    failures: int = 0
    extra: Dict[str, Path] = field(default_factory=dict)

    @property
    def all_failed(self) -> bool:
        return self.runs > 0 and self.failures == self.runs


def write_csv(path: Path, fields: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    """Write rows with a fixed header.

    Raises:
        ExperimentError: If the file cannot be written
    """
    path = Path(path)
    # Object columns keep integer cells unpadded next to missing ones
    frame = pd.DataFrame(list(rows), columns=list(fields), dtype=object)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        raise ExperimentError(f"Cannot write {path}: {e}") from e
    logger.info(f"Wrote {path}")
    return path


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}")


def realization_scenario(spec: ExperimentSpec, index: int) -> Tuple[int, Scenario]:
    """Seed and scene of realization ``index``."""
    seed = spec.seed + index
    if spec.random_scenes:
        return seed, sample_random_scenario(np.random.default_rng(seed), load_scenario_config(spec.scenario))
    return seed, load_scenario(spec.scenario)


def _map_realizations(spec: ExperimentSpec, task: Callable, args: List[Tuple]) -> List:
    if spec.workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            return list(pool.map(task, *zip(*args)))
    return [task(*a) for a in args]


def _run_scheme(scheme: str, scenario: Scenario, options: RunOptions) -> Optional[RunResult]:
    try:
        result = run_baseline(scheme, scenario, options)
    except OptimizationError as e:
        logger.warning(f"Scheme {scheme} failed: {e}")
        return None
    return None if result.status == "aborted" else result


# ============ Bound ============

def _bound_rows(scenario: Scenario, sweep: str, samples: int, seed: int) -> List[Dict[str, Any]]:
    rng = np.random.default_rng(seed)
    x = default_layout(scenario)
    rows = []
    for g in range(scenario.n_eavesdroppers):
        nominal = float(np.linalg.norm(ea_channel(scenario.without_blockages(), g, x).H))
        stats = empirical_error(scenario, g, x, rng, samples)
        proposed = ea_bound_radius(scenario, g, x)
        linear = linear_baseline_bound(scenario, g, x)
        rows.append({
            "sweep": sweep,
            "pos_err_m": scenario.pos_err,
            "arc_err_deg": scenario.arc_err_deg,
            "eavesdropper": g,
            "bound_proposed": proposed,
            "bound_linear": linear,
            "err_max": stats.max,
            "err_mean": stats.mean,
            "bound_proposed_norm": proposed / nominal,
            "bound_linear_norm": linear / nominal,
            "err_max_norm": stats.normalized_max,
            "err_mean_norm": stats.normalized_mean,
        })
    return rows


def cmd_bound(spec: ExperimentSpec, settings: Optional[Settings] = None) -> ExperimentOutcome:
    """Proposed and linear bounds against sampled errors, sweeping one error type at a time."""
    settings = settings or get_settings()
    samples = spec.samples or settings.bound_samples
    base = load_scenario(spec.scenario)
    rows: List[Dict[str, Any]] = []
    for pos_err in spec.grid:
        rows += _bound_rows(base.with_ea_uncertainty(pos_err, 0.0), "position", samples, spec.seed)
    for arc in spec.arc_grid_deg:
        rows += _bound_rows(base.with_ea_uncertainty(0.0, arc), "heading", samples, spec.seed)
    violations = sum(1 for r in rows if r["err_max"] > r["bound_proposed"] * (1 + 1e-9))
    if violations:
        logger.error(f"Sampled error exceeded the proposed bound at {violations} grid points")
    return ExperimentOutcome(path=write_csv(spec.out, BOUND_FIELDS, rows), rows=rows)


# ============ Convergence ============

def _convergence_task(spec: ExperimentSpec, index: int):
    seed, scenario = realization_scenario(spec, index)
    rows, results, failures = [], [], 0
    for scheme in spec.schemes:
        result = _run_scheme(scheme, scenario, spec.options.model_copy(update={"seed": seed}))
        if result is None:
            failures += 1
            continue
        results.append(result_row(result, scenario, seed))
        rows += [
            {
                "seed": seed, "scheme": scheme, "bcd_iter": r.iteration, "block": r.block,
                "objective": r.objective, "leak_margin": r.leak_margin, "wall_ms": round(r.wall_ms, 3),
            }
            for r in result.trace
        ]
    return rows, len(spec.schemes), failures, results


def cmd_convergence(spec: ExperimentSpec) -> ExperimentOutcome:
    """Objective after every BCD block for each scheme and realization, plus final results."""
    parts = _map_realizations(spec, _convergence_task, [(spec, i) for i in range(spec.realizations)])
    rows = [row for part in parts for row in part[0]]
    results = [row for part in parts for row in part[3]]
    return ExperimentOutcome(
        path=write_csv(spec.out, CONVERGENCE_FIELDS, rows),
        rows=rows,
        runs=sum(p[1] for p in parts),
        failures=sum(p[2] for p in parts),
        extra={"results": write_csv(_sibling(spec.out, "results"), RESULT_FIELDS, results)},
    )


# ============ Sweeps ============

def _sweep_task(spec: ExperimentSpec, index: int) -> Tuple[List[Dict[str, Any]], int, int]:
    seed, base = realization_scenario(spec, index)
    rows, failures = [], 0
    for value in spec.grid:
        scenario = base.with_power(value) if spec.kind == "power_sweep" else base.with_kappa(value)
        for scheme in spec.schemes:
            result = _run_scheme(scheme, scenario, spec.options.model_copy(update={"seed": seed}))
            if result is None:
                failures += 1
                continue
            rows.append(result_row(result, scenario, seed))
    return rows, len(spec.grid) * len(spec.schemes), failures


def summarize(rows: List[Dict[str, Any]], key: str, runs_per_point: int) -> List[Dict[str, Any]]:
    """Mean sum rate and leakage per (scheme, grid value), grid values in ascending order."""
    if not rows:
        return []
    other = "kappa2" if key == "p_max_dbm" else "p_max_dbm"
    summary = (
        pd.DataFrame(rows)
        .groupby(["scheme", key], sort=True)
        .agg(**{
            other: (other, "first"),
            "mean_sum_rate": ("sum_rate", "mean"),
            "mean_leak_max": ("leak_max", "mean"),
            "realizations": ("sum_rate", "size"),
        })
        .reset_index()
    )
    summary["failures"] = runs_per_point - summary["realizations"]
    return summary[list(SUMMARY_FIELDS)].to_dict("records")


def _sweep(spec: ExperimentSpec, key: str) -> ExperimentOutcome:
    parts = _map_realizations(spec, _sweep_task, [(spec, i) for i in range(spec.realizations)])
    rows = [row for part, _, _ in parts for row in part]
    path = write_csv(spec.out, RESULT_FIELDS, rows)
    summary_path = write_csv(
        _sibling(spec.out, "summary"), SUMMARY_FIELDS, summarize(rows, key, spec.realizations)
    )
    return ExperimentOutcome(
        path=path,
        rows=rows,
        runs=sum(p[1] for p in parts),
        failures=sum(p[2] for p in parts),
        extra={"summary": summary_path},
    )


def cmd_power_sweep(spec: ExperimentSpec) -> ExperimentOutcome:
    """Robust sum rate per scheme over total power budgets in dBm."""
    return _sweep(spec, "p_max_dbm")


def cmd_kappa_sweep(spec: ExperimentSpec) -> ExperimentOutcome:
    """Robust sum rate per scheme over the user CSI error level kappa^2."""
    return _sweep(spec, "kappa2")


# ============ Snapshot ============

def snapshot_rows(scenario: Scenario, result: RunResult) -> List[Dict[str, Any]]:
    """Final PA positions with their power ratios, followed by blockage footprints."""
    state = result.state
    rows = []
    for n, wg in enumerate(scenario.waveguides):
        for m in range(scenario.pas_per_waveguide):
            rows.append({
                "kind": "pa", "index": n * scenario.pas_per_waveguide + m, "n": n, "m": m,
                "x_m": float(state.x[n, m]), "y_m": wg.feed_y, "z_m": wg.height, "p_nm": float(state.p[n, m]),
            })
    for q, box in enumerate(scenario.blockages):
        x0, x1, y0, y1, height = box.footprint()
        rows.append({
            "kind": "blockage", "index": q, "x_m": x0, "y_m": y0, "z_m": 0.0,
            "x1_m": x1, "y1_m": y1, "height_m": height,
        })
    return rows


def cmd_snapshot(spec: ExperimentSpec) -> ExperimentOutcome:
    """Optimized layout, per-PA power ratios, blockages, channels and the position trace."""
    seed, scenario = realization_scenario(spec, 0)
    scheme = spec.schemes[0]
    result = _run_scheme(scheme, scenario, spec.options.model_copy(update={"seed": seed}))
    if result is None:
        return ExperimentOutcome(path=spec.out, rows=[], runs=1, failures=1)
    rows = snapshot_rows(scenario, result)
    design_scene = scenario.without_blockages() if scheme.endswith("_noblk") else scenario
    extra = {
        "positions": write_csv(_sibling(spec.out, "positions"), POSITION_FIELDS, result.positions),
        "channels": write_csv(
            _sibling(spec.out, "channels"), CHANNEL_FIELDS, channel_table(design_scene, result.state.x)
        ),
    }
    logger.info(
        f"Snapshot {scheme}: robust sum rate {result.sum_rate:.4f} bits/s/Hz, "
        f"AN power {float(np.real(np.trace(result.state.V))):.3e} W"
    )
    return ExperimentOutcome(
        path=write_csv(spec.out, SNAPSHOT_FIELDS, rows), rows=rows, runs=1, extra=extra
    )


COMMANDS: Dict[str, Callable[[ExperimentSpec], ExperimentOutcome]] = {
    "bound": cmd_bound,
    "convergence": cmd_convergence,
    "power_sweep": cmd_power_sweep,
    "kappa_sweep": cmd_kappa_sweep,
    "snapshot": cmd_snapshot,
}


def run_experiment(spec: ExperimentSpec) -> ExperimentOutcome:
    logger.info(f"Running {spec.kind} with {spec.realizations} realization(s), seed {spec.seed}")
    return COMMANDS[spec.kind](spec)
