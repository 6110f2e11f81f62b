"""Worst-case information leakage to eavesdroppers.

Two uncertainty sets are evaluated. The structured set holds the actual array
perturbations (location offset in the ground disk, heading error); it is
searched on a dense grid refined by Nelder-Mead. The Frobenius ball of the
geometric error bound contains every structured channel; it is searched with
random directions, an alignment heuristic and the structured maximizer, and
certified through the S-procedure LMI.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize, minimize_scalar

from ..channel import EAPerturbation, ea_channel
from ..config import Settings, get_settings
from ..geometry import Scenario
from ..scaling import ProblemScale
from ..uncertainty import UncertaintyError, error_bound
from .metrics import ea_rate
from .state import DesignState

logger = logging.getLogger(__name__)

STRATEGIES = ("structured", "ball", "both")


@dataclass
class LeakageReport:
    nominal: float
    structured: float = float("nan")
    ball: float = float("nan")
    radius: float = 0.0
    structured_arg: Tuple[Tuple[float, float, float], float] = ((0.0, 0.0, 0.0), 0.0)
    evaluations: int = 0

    @property
    def worst(self) -> float:
        values = [v for v in (self.nominal, self.structured) if not math.isnan(v)]
        return max(values)


def ea_bound_radius(scenario: Scenario, g: int, x: NDArray[np.float64]) -> float:
    """Frobenius radius of the eavesdropper error, falling back to the height-aware bound."""
    try:
        return error_bound(scenario, g, x).total
    except UncertaintyError:
        logger.warning(
            f"Planar distance bound undefined for eavesdropper {g}; using the height-aware bound"
        )
        return error_bound(scenario, g, x, include_height=True).total


def _project(params, radius: float, arc: float):
    de = np.array([params[0], params[1], 0.0])
    norm = np.linalg.norm(de)
    if norm > radius:
        de = de * (radius / norm) if norm > 0 else de
    return de, float(np.clip(params[2], -arc, arc))


def _structured_search(state, scenario, g, k, grid, starts, noise):
    radius, arc = scenario.pos_err, scenario.arc_err_deg
    nx, ny, nt = grid
    xs = np.linspace(-radius, radius, nx) if radius > 0 else np.zeros(1)
    ys = np.linspace(-radius, radius, ny) if radius > 0 else np.zeros(1)
    ts = np.linspace(-arc, arc, nt) if arc > 0 else np.zeros(1)
    evaluations = 0

    def leak(params) -> float:
        nonlocal evaluations
        evaluations += 1
        de, dt = _project(params, radius, arc)
        H = ea_channel(scenario, g, state.x, EAPerturbation(de, dt)).H
        return ea_rate(H, state, k, noise)

    cells = []
    for ex in xs:
        for ey in ys:
            if ex * ex + ey * ey > radius * radius * (1 + 1e-12):
                continue
            for dt in ts:
                cells.append((leak((ex, ey, dt)), (ex, ey, dt)))
    cells.sort(key=lambda item: -item[0])
    best_value, best_params = cells[0]

    if radius > 0 or arc > 0:
        step = np.array([
            2 * radius / max(nx - 1, 1),
            2 * radius / max(ny - 1, 1),
            2 * arc / max(nt - 1, 1),
        ])
        for _, params in cells[:starts]:
            origin = np.asarray(params, dtype=float)
            simplex = np.vstack([origin] + [origin + np.diag(step)[i] for i in range(3)])
            result = minimize(
                lambda p: -leak(p),
                origin,
                method="Nelder-Mead",
                options={"initial_simplex": simplex, "fatol": 1e-5, "xatol": 1e-9, "maxiter": 200},
            )
            if -result.fun > best_value:
                best_value = float(-result.fun)
                best_params = tuple(result.x)

    de, dt = _project(best_params, radius, arc)
    return best_value, (tuple(float(v) for v in de), dt), evaluations


def _ball_search(state, H_hat, radius, k, noise, rng, samples, extra):
    best = ea_rate(H_hat, state, k, noise)
    if radius <= 0:
        return best
    candidates = list(extra)
    beam = state.effective_beams()[:, k]
    a = H_hat.conj().T @ beam
    if np.linalg.norm(beam) > 0 and np.linalg.norm(a) > 0:
        aligned = np.outer(beam, a.conj()) / (np.linalg.norm(beam) * np.linalg.norm(a))
        candidates.append(radius * aligned)
    for _ in range(samples):
        direction = rng.standard_normal(H_hat.shape) + 1j * rng.standard_normal(H_hat.shape)
        candidates.append(radius * direction / np.linalg.norm(direction))
    for delta in candidates:
        best = max(best, ea_rate(H_hat + delta, state, k, noise))
    return best


def worst_case_leakage(
    state: DesignState,
    scenario: Scenario,
    g: int,
    k: int,
    strategy: str = "both",
    grid: Optional[Tuple[int, int, int]] = None,
    rng: Optional[np.random.Generator] = None,
    settings: Optional[Settings] = None,
) -> LeakageReport:
    """Largest eavesdropping rate of user k's stream at eavesdropper g over its uncertainty."""
    if strategy not in STRATEGIES:
        raise ValueError(f"Unknown leakage strategy: {strategy}")
    settings = settings or get_settings()
    grid = grid or tuple(settings.leak_grid)
    rng = rng or np.random.default_rng(0)
    noise = scenario.noise_ea

    H_hat = ea_channel(scenario, g, state.x).H
    report = LeakageReport(nominal=ea_rate(H_hat, state, k, noise))
    extra = []
    if strategy in ("structured", "both"):
        value, arg, evaluations = _structured_search(
            state, scenario, g, k, grid, settings.leak_refine_starts, noise
        )
        report.structured, report.structured_arg, report.evaluations = value, arg, evaluations
        de, dt = arg
        worst_H = ea_channel(scenario, g, state.x, EAPerturbation(np.array(de), dt)).H
        extra.append(worst_H - H_hat)
    if strategy in ("ball", "both"):
        report.radius = ea_bound_radius(scenario, g, state.x)
        inside = [d for d in extra if np.linalg.norm(d) <= report.radius * (1 + 1e-9)]
        report.ball = _ball_search(
            state, H_hat, report.radius, k, noise, rng, settings.ball_samples, inside
        )
    logger.debug(
        f"Leakage user {k} -> EA {g}: nominal {report.nominal:.4f}, "
        f"structured {report.structured:.4f}, ball {report.ball:.4f}"
    )
    return report


def leakage_lmi_margin(
    H_hat: NDArray[np.complex128],
    beam: NDArray[np.complex128],
    noise_cov: NDArray[np.complex128],
    radius: float,
    r_th: float,
    noise: float,
    scale: ProblemScale,
) -> float:
    """Largest minimum eigenvalue of the S-procedure leakage LMI over its multiplier.

    Nonnegative values certify that every channel in the Frobenius ball of the
    given radius leaks at most r_th bits/s/Hz. Computed in normalised units.
    """
    H = H_hat * scale.channel
    beam = beam / math.sqrt(scale.power)
    Z = noise_cov / scale.power
    sigma2 = scale.noise_units(noise)
    rho = radius * scale.channel
    threshold = 2.0 ** r_th - 1.0
    M = threshold * Z - np.outer(beam, beam.conj())
    T, L = H.shape[1], H.shape[0]
    corner = H.conj().T @ M @ H + threshold * sigma2 * np.eye(T)
    if rho <= 0:
        return float(np.linalg.eigvalsh(0.5 * (corner + corner.conj().T))[0])

    def neg_min_eig(delta: float) -> float:
        block = np.block([
            [corner - delta * np.eye(T), H.conj().T @ M],
            [M @ H, M + (delta / rho**2) * np.eye(L)],
        ])
        return -float(np.linalg.eigvalsh(0.5 * (block + block.conj().T))[0])

    upper = threshold * sigma2 + np.linalg.norm(corner, 2) + 1.0
    result = minimize_scalar(neg_min_eig, bounds=(0.0, upper), method="bounded",
                             options={"xatol": 1e-10 * upper})
    return float(max(-result.fun, -neg_min_eig(0.0)))
