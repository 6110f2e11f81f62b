"""CSI uncertainty: user error balls and the geometry-aware eavesdropper error bound.

The eavesdropper array is only known up to a location offset ||de|| <= pos_err
and an orientation error |dtheta| <= arc_err. Both perturb the link distances
d to every PA, and the channel error per link is

    Gamma = (1/d - 1/d_hat)^2 + 2 (1 - cos(2 pi (d - d_hat) / lambda)) / (d d_hat)

scaled by (lambda / 4 pi)^2. The bound replaces |d - d_hat| by the geometric
worst case dR and d, d_hat by a lower bound on the distance.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .channel import pa_points
from .config import get_settings
from .geometry import Scenario

logger = logging.getLogger(__name__)


class UncertaintyError(Exception):
    """Uncertainty bound undefined for the given geometry."""
    pass


@dataclass
class ErrorStatistics:
    """Monte Carlo statistics of the Frobenius channel error."""
    max: float
    mean: float
    p50: float
    p95: float
    p99: float
    normalized_max: float
    normalized_mean: float
    samples: int


@dataclass
class BoundReport:
    """Frobenius error bound of one eavesdropper, with its per-link ingredients (T x M*N)."""
    total: float
    delta_r: NDArray[np.float64]
    r_lb: NDArray[np.float64]
    empirical: Optional[ErrorStatistics] = None


def omega(x):
    """1 - cos(x) below pi, clamped to 2 above."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise UncertaintyError("omega is defined for nonnegative arguments")
    result = np.where(x < math.pi, 1.0 - np.cos(x), 2.0)
    return float(result) if result.ndim == 0 else result


def _array_frame(scenario: Scenario, g: int, t: int, pa):
    """Heading u, its normal R(pi/2)u, and the nominal antenna-to-PA offsets."""
    eave = scenario.eavesdroppers[g]
    heading = math.radians(eave.theta_deg)
    u = np.array([math.cos(heading), math.sin(heading), 0.0])
    v = np.array([-math.sin(heading), math.cos(heading), 0.0])
    antenna = eave.position + (t * scenario.wavelength / 2.0) * u
    offsets = antenna - np.asarray(pa, dtype=float)
    return u, v, offsets


def distance_lower_bound(
    scenario: Scenario, g: int, t: int, pa, include_height: Optional[bool] = None
):
    """Lower bound on the antenna-to-PA distance over all orientation errors.

    The longitudinal and transverse projections are each reduced by the
    largest displacement a rotation of the lever arm t*lambda/2 can cause and
    clamped at zero. With ``include_height`` the vertical offset, which the
    in-plane rotation does not change, is added as a third component.
    """
    if include_height is None:
        include_height = get_settings().bound_include_height
    u, v, offsets = _array_frame(scenario, g, t, pa)
    arc = math.radians(scenario.arc_err_deg)
    lever = t * scenario.wavelength / 2.0
    longitudinal = np.maximum(np.abs(offsets @ u) - lever * (1.0 - math.cos(arc)), 0.0)
    transverse = np.maximum(np.abs(offsets @ v) - lever * math.sin(arc), 0.0)
    squared = longitudinal**2 + transverse**2
    if include_height:
        squared = squared + offsets[..., 2] ** 2
    return np.sqrt(squared)


def delta_R(scenario: Scenario, g: int, t: int, pa):
    """Worst-case distance change pos_err + t*lambda*sin(arc/2)*|d_hat . R(pi/2)u|."""
    _, v, offsets = _array_frame(scenario, g, t, pa)
    distance = np.linalg.norm(offsets, axis=-1)
    if np.any(distance <= 0):
        raise UncertaintyError("Antenna coincides with a PA")
    direction = offsets / distance[..., None]
    arc = math.radians(scenario.arc_err_deg)
    lever = t * scenario.wavelength * math.sin(arc / 2.0)
    return scenario.pos_err + lever * np.abs(direction @ v)


def error_bound(
    scenario: Scenario,
    g: int,
    x: NDArray[np.float64],
    include_height: Optional[bool] = None,
) -> BoundReport:
    """Frobenius-norm bound on the eavesdropper channel error for PA layout ``x``.

    Raises:
        UncertaintyError: If some distance lower bound does not exceed pos_err
    """
    points = pa_points(scenario, x)
    antennas = scenario.eavesdroppers[g].antennas
    delta_r = np.empty((antennas, points.shape[0]))
    r_lb = np.empty_like(delta_r)
    for t in range(1, antennas + 1):
        delta_r[t - 1] = delta_R(scenario, g, t, points)
        r_lb[t - 1] = distance_lower_bound(scenario, g, t, points, include_height)

    margin = r_lb - scenario.pos_err
    if np.any(margin <= 0):
        raise UncertaintyError(
            f"Eavesdropper {g} is within its location error of a PA; bound undefined"
        )
    k = 2 * math.pi / scenario.wavelength
    terms = (delta_r / margin**2) ** 2 + 2.0 * omega(k * delta_r) / margin**2
    total = scenario.wavelength / (4 * math.pi) * math.sqrt(float(terms.sum()))
    return BoundReport(total=total, delta_r=delta_r, r_lb=r_lb)


def gamma_term(d, d_hat, wavelength: float):
    """Per-link squared channel error as a function of true and nominal distance."""
    d = np.asarray(d, dtype=float)
    d_hat = np.asarray(d_hat, dtype=float)
    phase = 2 * np.pi * (d - d_hat) / wavelength
    return (1.0 / d - 1.0 / d_hat) ** 2 + 2.0 * (1.0 - np.cos(phase)) / (d * d_hat)


def gamma_direct(d, d_hat, wavelength: float):
    """|exp(-j k d)/d - exp(-j k d_hat)/d_hat|^2 evaluated by differencing."""
    k = 2 * np.pi / wavelength
    d = np.asarray(d, dtype=float)
    d_hat = np.asarray(d_hat, dtype=float)
    return np.abs(np.exp(-1j * k * d) / d - np.exp(-1j * k * d_hat) / d_hat) ** 2


def sample_ea_perturbations(scenario: Scenario, rng: np.random.Generator, samples: int):
    """Uniform draws of ground-plane offsets in the location disk and heading errors."""
    radius = scenario.pos_err * np.sqrt(rng.uniform(size=samples))
    angle = rng.uniform(0.0, 2 * np.pi, size=samples)
    delta_e = np.column_stack([radius * np.cos(angle), radius * np.sin(angle), np.zeros(samples)])
    delta_theta = rng.uniform(-scenario.arc_err_deg, scenario.arc_err_deg, size=samples)
    return delta_e, delta_theta


def _perturbed_distances(scenario, g, points, delta_e, delta_theta_deg):
    """Distances (S, T, L) from perturbed antennas to the PAs."""
    eave = scenario.eavesdroppers[g]
    heading = np.deg2rad(eave.theta_deg + np.asarray(delta_theta_deg, dtype=float))
    direction = np.stack([np.cos(heading), np.sin(heading), np.zeros_like(heading)], axis=-1)
    lever = np.arange(1, eave.antennas + 1) * scenario.wavelength / 2.0
    antennas = (
        eave.position
        + np.asarray(delta_e, dtype=float)[:, None, :]
        + lever[None, :, None] * direction[:, None, :]
    )
    return np.linalg.norm(antennas[:, :, None, :] - points[None, None, :, :], axis=-1)


def empirical_error(
    scenario: Scenario,
    g: int,
    x: NDArray[np.float64],
    rng: np.random.Generator,
    samples: int,
) -> ErrorStatistics:
    """Monte Carlo Frobenius error of the LoS eavesdropper channel over the uncertainty set."""
    if samples < 1:
        raise UncertaintyError("At least one sample is required")
    points = pa_points(scenario, x)
    delta_e, delta_theta = sample_ea_perturbations(scenario, rng, samples)
    nominal = _perturbed_distances(scenario, g, points, np.zeros((1, 3)), np.zeros(1))[0]
    perturbed = _perturbed_distances(scenario, g, points, delta_e, delta_theta)
    gamma = gamma_term(perturbed, nominal[None], scenario.wavelength)
    scale = scenario.wavelength / (4 * math.pi)
    errors = scale * np.sqrt(gamma.sum(axis=(1, 2)))
    nominal_norm = scale * math.sqrt(float(np.sum(1.0 / nominal**2)))
    return ErrorStatistics(
        max=float(errors.max()),
        mean=float(errors.mean()),
        p50=float(np.percentile(errors, 50)),
        p95=float(np.percentile(errors, 95)),
        p99=float(np.percentile(errors, 99)),
        normalized_max=float(errors.max() / nominal_norm),
        normalized_mean=float(errors.mean() / nominal_norm),
        samples=samples,
    )


def linear_baseline_bound(scenario: Scenario, g: int, x: NDArray[np.float64]) -> float:
    """First-order near-field bound without cancellation or clamping.

    Every link is displaced by the largest possible amount pos_err + lever * arc
    and the phase and amplitude sensitivities are added in quadrature.
    """
    points = pa_points(scenario, x)
    eave = scenario.eavesdroppers[g]
    k = 2 * math.pi / scenario.wavelength
    total = 0.0
    for t in range(1, eave.antennas + 1):
        _, _, offsets = _array_frame(scenario, g, t, points)
        d_hat = np.linalg.norm(offsets, axis=-1)
        dr = scenario.pos_err + (t * scenario.wavelength / 2.0) * math.radians(scenario.arc_err_deg)
        total += float(np.sum((k * dr / d_hat) ** 2 + (dr / d_hat**2) ** 2))
    return scenario.wavelength / (4 * math.pi) * math.sqrt(total)


def sample_user_error(
    rng: np.random.Generator, radius: float, dim: int, on_sphere: bool = False
) -> NDArray[np.complex128]:
    """Complex vector uniform in (or on) the ball of the given radius."""
    if radius < 0:
        raise UncertaintyError("Radius must be nonnegative")
    if radius == 0:
        return np.zeros(dim, dtype=complex)
    direction = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    scale = radius if on_sphere else radius * rng.uniform() ** (1.0 / (2 * dim))
    return scale * direction


def user_radius(scenario: Scenario, h_hat: NDArray[np.complex128]) -> float:
    """Ball radius kappa * ||h_hat|| for a user channel estimate."""
    return scenario.kappa * float(np.linalg.norm(h_hat))
