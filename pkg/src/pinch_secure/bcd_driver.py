"""Block coordinate descent over beamforming and PA positioning, plus baseline schemes.

Each BCD iteration solves subproblem 1 (beams, AN, power ratios) at fixed PA
positions, then runs the two-stage positioning at the new beams. Blocks that
fail keep their previous values; two consecutive failures abort the run with
the last accepted design.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field

from .beamforming_opt import (
    OptimizationError,
    back_off_beams,
    initialize_state,
    iterate_subproblem1,
)
from .channel import ChannelError, build_channel_set
from .conic import ConicError
from .config import Settings, get_settings
from .constants import watts_to_dbm
from .geometry import Scenario
from .positioning_opt import PositionTraceRow, optimize_positions, snap_layout
from .rates import (
    DesignState,
    budgets_ok,
    leakage_certificate,
    robust_objective,
    robustness_bounds,
    worst_case_leakage,
)
from .waveguide_power import (
    attenuation_constant,
    check_feasible,
    clamp_to_feasible,
    uniform_feasible_ratios,
)

logger = logging.getLogger(__name__)

SCHEMES = (
    "Proposed",
    "Proposed_noblk",
    "UpperBound",
    "BM1_blk",
    "BM1_noblk",
    "BM2_blk",
    "BM2_noblk",
    "Naive",
)

RESULT_FIELDS = ("seed", "scheme", "p_max_dbm", "kappa2", "sum_rate", "leak_max", "iters", "wall_ms")


class RunOptions(BaseModel):
    """Per-run knobs layered over the global settings."""
    max_iter: int = Field(15, ge=1, description="BCD iteration cap")
    tol_bits: float = Field(1e-3, gt=0, description="Stop when one iteration gains less (bits/s/Hz)")
    mm_max_iter: Optional[int] = Field(None, ge=1)
    stage1_max_iter: Optional[int] = Field(None, ge=1)
    stage2_max_iter: Optional[int] = Field(None, ge=1)
    stage2_penalty_rounds: Optional[int] = Field(None, ge=1)
    seed: int = 0
    certify_strategy: str = "structured"

    def apply(self, settings: Settings) -> Settings:
        overrides = {
            name: value
            for name, value in (
                ("mm_max_iter", self.mm_max_iter),
                ("stage1_max_iter", self.stage1_max_iter),
                ("stage2_max_iter", self.stage2_max_iter),
                ("stage2_penalty_rounds", self.stage2_penalty_rounds),
            )
            if value is not None
        }
        return settings.model_copy(update=overrides) if overrides else settings


@dataclass
class BCDTraceRow:
    iteration: int
    block: str
    objective: float
    leak_margin: float
    wall_ms: float
    status: str = "ok"


@dataclass
class CertificationReport:
    """Final checks of a design on the scene it is evaluated on."""
    sum_rate: float
    leak_max: float
    leak_margin: float
    leak_threshold: float
    budgets_ok: bool
    power_feasible: bool
    geometry_ok: bool
    leakage: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 0)))
    tolerance: float = 1e-3

    @property
    def secure(self) -> bool:
        return self.leak_max <= self.leak_threshold + self.tolerance

    @property
    def passed(self) -> bool:
        return self.secure and self.budgets_ok and self.power_feasible and self.geometry_ok


@dataclass
class RunResult:
    scheme: str
    state: DesignState
    trace: List[BCDTraceRow]
    certification: CertificationReport
    iterations: int
    wall_ms: float
    status: str
    positions: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def sum_rate(self) -> float:
        """Reported rate: zero when the design leaks beyond the threshold."""
        return self.certification.sum_rate if self.certification.secure else 0.0

    @property
    def objective_trace(self) -> List[float]:
        return [row.objective for row in self.trace]


# ============ Layouts and fixed designs ============

def default_layout(scenario: Scenario) -> NDArray[np.float64]:
    """PAs spread evenly over each waveguide, one per segment centre."""
    M = scenario.pas_per_waveguide
    row = (np.arange(M) + 0.5) * scenario.waveguide_length / M
    return snap_layout(scenario, np.tile(row, (scenario.n_waveguides, 1)))


def feed_point_layout(scenario: Scenario) -> NDArray[np.float64]:
    """PAs packed at the feed point with the minimum spacing."""
    row = np.arange(scenario.pas_per_waveguide) * scenario.spacing
    return snap_layout(scenario, np.tile(row, (scenario.n_waveguides, 1)))


def uniform_state(scenario: Scenario, x: NDArray[np.float64]) -> DesignState:
    """Equal-gain beams with half of every waveguide budget spent on AN."""
    budgets = scenario.waveguide_budgets.copy()
    K = scenario.n_users
    w = np.tile(np.sqrt(budgets / (2.0 * K)), (K, 1)).astype(complex)
    V = np.diag(budgets / 2.0).astype(complex)
    p = uniform_feasible_ratios(x, attenuation_constant(scenario))
    return DesignState(w=w, V=V, p=p, x=np.asarray(x, dtype=float).copy(), budgets=budgets)


def _layout_ok(scenario: Scenario, x: NDArray[np.float64], tol: float = 1e-9) -> bool:
    if np.any(x < -tol) or np.any(x > scenario.waveguide_length + tol):
        return False
    return bool(np.all(np.diff(x, axis=1) >= scenario.spacing - tol)) if x.shape[1] > 1 else True


# ============ Certification ============

def certify(
    scenario: Scenario,
    state: DesignState,
    settings: Optional[Settings] = None,
    strategy: str = "structured",
    rng: Optional[np.random.Generator] = None,
) -> CertificationReport:
    """Robust sum rate, worst-case leakage per (user, eavesdropper) and constraint checks."""
    settings = settings or get_settings()
    rng = rng or np.random.default_rng(0)
    channels = build_channel_set(scenario, state.x)
    bounds = robustness_bounds(scenario, state.x, channels)
    leakage = np.zeros((state.n_users, scenario.n_eavesdroppers))
    for g in range(scenario.n_eavesdroppers):
        for k in range(state.n_users):
            leakage[k, g] = worst_case_leakage(
                state, scenario, g, k, strategy=strategy, rng=rng, settings=settings
            ).worst
    report = CertificationReport(
        sum_rate=robust_objective(scenario, state, channels, bounds),
        leak_max=float(leakage.max()) if leakage.size else 0.0,
        leak_margin=leakage_certificate(scenario, state, channels, bounds),
        leak_threshold=scenario.r_th,
        budgets_ok=budgets_ok(state, scenario.p_max),
        power_feasible=check_feasible(state.p, state.x, attenuation_constant(scenario)).feasible,
        geometry_ok=_layout_ok(scenario, state.x),
        leakage=leakage,
        tolerance=settings.leak_tolerance,
    )
    if not report.passed:
        logger.warning(
            f"Design fails certification: leak {report.leak_max:.4f} (threshold {scenario.r_th}), "
            f"budgets {report.budgets_ok}, power {report.power_feasible}, geometry {report.geometry_ok}"
        )
    return report


def _objective(scenario: Scenario, state: DesignState) -> Tuple[float, float]:
    channels = build_channel_set(scenario, state.x)
    bounds = robustness_bounds(scenario, state.x, channels)
    return (
        robust_objective(scenario, state, channels, bounds),
        leakage_certificate(scenario, state, channels, bounds),
    )


# ============ BCD ============

def _position_dicts(iteration: int, rows: List[PositionTraceRow]) -> List[Dict[str, Any]]:
    return [
        {"bcd_iter": iteration, "stage": r.stage, "n": r.n, "m": r.m, "x_m": r.x_m, "p_nm": r.p_nm}
        for r in rows
    ]


def _bcd_loop(
    scenario: Scenario,
    state: DesignState,
    options: RunOptions,
    settings: Settings,
    beamforming: bool = True,
    positioning: bool = True,
    scheme: str = "Proposed",
) -> RunResult:
    start = time.perf_counter()
    rng = np.random.default_rng(options.seed)
    objective, margin = _objective(scenario, state)
    trace = [BCDTraceRow(0, "init", objective, margin, 0.0)]
    positions: List[Dict[str, Any]] = []
    failures = 0
    status = "max_iter"
    iterations = 0

    def failed(block: str, iteration: int, reason: str) -> bool:
        nonlocal failures
        failures += 1
        logger.warning(f"BCD iteration {iteration}: {block} failed ({reason}), keeping previous values")
        return failures >= 2

    for tau in range(1, options.max_iter + 1):
        iterations = tau
        previous = objective
        tick = time.perf_counter()
        abort = False

        if beamforming:
            try:
                sub = iterate_subproblem1(scenario, state, settings=settings, rng=rng)
                if sub.status == "solver_failure" and not sub.trace:
                    abort = failed("beamforming", tau, "solver failure")
                else:
                    failures = 0
                    if sub.objective >= objective - settings.monotone_slack * max(1.0, abs(objective)):
                        state, objective = sub.state, max(sub.objective, objective)
                        margin = sub.leak_margin
            except (OptimizationError, ConicError) as e:
                abort = failed("beamforming", tau, str(e))
            elapsed = (time.perf_counter() - tick) * 1e3
            trace.append(BCDTraceRow(tau, "beamforming", objective, margin, elapsed))

        if positioning and not abort:
            tick = time.perf_counter()
            try:
                pos = optimize_positions(scenario, state, settings)
                positions += _position_dicts(tau, pos.positions)
                stages = {stage.status for stage in (pos.stage1, pos.stage2) if stage is not None}
                if stages == {"solver_failure"}:
                    abort = failed("positioning", tau, "solver failure")
                else:
                    failures = 0
                    value = pos.value
                    slack = settings.monotone_slack * max(1.0, abs(objective))
                    if value.certified(settings.certificate_tol) and value.objective >= objective - slack:
                        state, margin = pos.state, value.margin
                        objective = max(value.objective, objective)
            except (OptimizationError, ConicError, ChannelError) as e:
                abort = failed("positioning", tau, str(e))
            elapsed = (time.perf_counter() - tick) * 1e3
            trace.append(BCDTraceRow(tau, "positioning", objective, margin, elapsed))

        logger.info(
            f"BCD iteration {tau}: robust sum rate {objective:.4f} bits/s/Hz "
            f"(gain {objective - previous:.2e})"
        )
        if abort:
            logger.error(f"BCD aborted after two consecutive block failures at iteration {tau}")
            status = "aborted"
            break
        if objective - previous < options.tol_bits:
            status = "converged"
            break

    certification = certify(scenario, state, settings, strategy=options.certify_strategy)
    return RunResult(
        scheme=scheme,
        state=state,
        trace=trace,
        certification=certification,
        iterations=iterations,
        wall_ms=(time.perf_counter() - start) * 1e3,
        status=status,
        positions=positions,
    )


def run_bcd(
    scenario: Scenario,
    options: Optional[RunOptions] = None,
    settings: Optional[Settings] = None,
    x0: Optional[NDArray[np.float64]] = None,
) -> RunResult:
    """Alternate subproblem 1 and the two-stage positioning until the gain drops below tolerance."""
    options = options or RunOptions()
    settings = options.apply(settings or get_settings())
    x = snap_layout(scenario, default_layout(scenario) if x0 is None else x0)
    state = initialize_state(scenario, x, settings=settings)
    logger.info(
        f"BCD start: N={scenario.n_waveguides}, M={scenario.pas_per_waveguide}, K={scenario.n_users}, "
        f"G={scenario.n_eavesdroppers}, P_max={watts_to_dbm(scenario.p_max):.1f} dBm"
    )
    return _bcd_loop(scenario, state, options, settings)


# ============ Baselines ============

def _naive(scenario: Scenario, options: RunOptions, settings: Settings) -> RunResult:
    """Design on the lossless blockage-free scene, then evaluate on the real one."""
    design = run_bcd(scenario.without_blockages().lossless(), options, settings)
    alpha = attenuation_constant(scenario)
    state = design.state.copy(p=clamp_to_feasible(design.state.p, design.state.x, alpha))
    certification = certify(scenario, state, settings, strategy=options.certify_strategy)
    if not certification.secure:
        logger.info(
            f"Naive design leaks {certification.leak_max:.4f} bits/s/Hz on the real scene, "
            f"rate set to zero"
        )
    return RunResult(
        scheme="Naive",
        state=state,
        trace=design.trace,
        certification=certification,
        iterations=design.iterations,
        wall_ms=design.wall_ms,
        status=design.status,
        positions=design.positions,
    )


def run_baseline(
    scheme: str,
    scenario: Scenario,
    options: Optional[RunOptions] = None,
    settings: Optional[Settings] = None,
) -> RunResult:
    """Run one of ``SCHEMES`` on a scenario.

    Raises:
        ValueError: If the scheme is unknown
    """
    if scheme not in SCHEMES:
        raise ValueError(f"Unknown scheme '{scheme}', expected one of {', '.join(SCHEMES)}")
    options = options or RunOptions()
    settings = options.apply(settings or get_settings())
    logger.info(f"Running scheme {scheme}")

    if scheme == "Naive":
        return _naive(scenario, options, settings)

    scene = scenario
    if scheme.endswith("_noblk"):
        scene = scenario.without_blockages()
    elif scheme == "UpperBound":
        scene = scenario.without_blockages().without_eavesdroppers().lossless()

    if scheme.startswith("BM1"):
        x = default_layout(scene)
        state = back_off_beams(scene, uniform_state(scene, x))
        result = _bcd_loop(scene, state, options, settings, beamforming=False, scheme=scheme)
    elif scheme.startswith("BM2"):
        x = feed_point_layout(scene)
        state = initialize_state(scene, x, settings=settings)
        result = _bcd_loop(scene, state, options.model_copy(update={"max_iter": 1}), settings,
                           positioning=False, scheme=scheme)
    else:
        result = run_bcd(scene, options, settings)
        result.scheme = scheme
    return result


def result_row(result: RunResult, scenario: Scenario, seed: int) -> Dict[str, Any]:
    """One row of the results CSV."""
    return {
        "seed": seed,
        "scheme": result.scheme,
        "p_max_dbm": round(watts_to_dbm(scenario.p_max), 6),
        "kappa2": scenario.kappa2,
        "sum_rate": result.sum_rate,
        "leak_max": result.certification.leak_max,
        "iters": result.iterations,
        "wall_ms": round(result.wall_ms, 3),
    }


def is_monotone(values: List[float], tol: float = 1e-6) -> bool:
    return all(b >= a - tol * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


def fraction_of_power_on_noise(state: DesignState, p_max: float) -> float:
    """Tr(V) / P_max."""
    return float(np.real(np.trace(state.V))) / p_max if p_max > 0 else math.nan
