"""Guided-wave attenuation and per-PA extractable power ratios.

A PA at axial position x_m can tap at most the power left in the waveguide
after the attenuation exp(-2 alpha x_m) and after every upstream PA has taken
its share, itself attenuated over the distance between the two PAs.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .constants import SPEED_OF_LIGHT
from .geometry import Scenario

logger = logging.getLogger(__name__)

FEASIBILITY_SLACK = 1e-9


def attenuation_constant(scenario: Scenario) -> float:
    """Attenuation alpha = lambda_g * eps_r * pi * f_c^2 / c^2 * tan(delta), in Np/m."""
    return (
        scenario.guided_wavelength
        * scenario.eps_r
        * math.pi
        * scenario.fc_hz**2
        / SPEED_OF_LIGHT**2
        * scenario.tan_delta
    )


def max_power_ratio(m: int, positions, p_prefix, alpha: float) -> float:
    """Largest ratio PA m (0-based) can extract given the upstream allocations.

    May be negative, signaling that the prefix already overdraws the waveguide.
    """
    positions = np.asarray(positions, dtype=float)
    prefix = np.asarray(p_prefix, dtype=float)[:m]
    x_m = positions[m]
    upstream = prefix * np.exp(-2.0 * alpha * (x_m - positions[:m]))
    return float(np.exp(-2.0 * alpha * x_m) - upstream.sum())


def selection_vector(m: int, positions, alpha: float) -> NDArray[np.float64]:
    """Weights s with s @ p <= exp(-2 alpha x_m) equivalent to p_m <= p_max(m)."""
    positions = np.asarray(positions, dtype=float)
    s = np.zeros(positions.size)
    s[:m] = np.exp(-2.0 * alpha * np.abs(positions[m] - positions[:m]))
    s[m] = 1.0
    return s


def budget_rhs(m: int, positions, alpha: float) -> float:
    return float(np.exp(-2.0 * alpha * np.asarray(positions, dtype=float)[m]))


@dataclass
class FeasibilityReport:
    feasible: bool
    worst_violation: float
    worst_index: Optional[Tuple[int, int]]


def check_feasible(
    p: NDArray[np.float64], positions: NDArray[np.float64], alpha: float,
    slack: float = FEASIBILITY_SLACK,
) -> FeasibilityReport:
    """Check the extractable-power constraint for every PA of every waveguide."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    worst, where = -np.inf, None
    for n in range(p.shape[0]):
        for m in range(p.shape[1]):
            violation = float(
                selection_vector(m, positions[n], alpha) @ p[n] - budget_rhs(m, positions[n], alpha)
            )
            if violation > worst:
                worst, where = violation, (n, m)
    negative = float(-p.min()) if p.size else 0.0
    if negative > worst:
        worst = negative
        where = tuple(int(i) for i in np.unravel_index(int(np.argmin(p)), p.shape))
    return FeasibilityReport(feasible=worst <= slack, worst_violation=worst, worst_index=where)


def uniform_feasible_ratios(positions: NDArray[np.float64], alpha: float) -> NDArray[np.float64]:
    """Largest common ratio per waveguide that every PA can extract."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    ratios = np.empty_like(positions)
    for n, row in enumerate(positions):
        limits = [
            budget_rhs(m, row, alpha) / selection_vector(m, row, alpha).sum()
            for m in range(row.size)
        ]
        ratios[n] = min(limits)
    return ratios


def forward_fill(
    rng: np.random.Generator, positions: NDArray[np.float64], alpha: float
) -> NDArray[np.float64]:
    """Random feasible allocation: each PA takes a uniform share of what is left."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    p = np.zeros_like(positions)
    for n, row in enumerate(positions):
        for m in range(row.size):
            p[n, m] = rng.uniform() * max(max_power_ratio(m, row, p[n], alpha), 0.0)
    return p


def clamp_to_feasible(
    p: NDArray[np.float64], positions: NDArray[np.float64], alpha: float
) -> NDArray[np.float64]:
    """Clip every ratio to its p_max in feed order, as a lossy waveguide would enforce."""
    p = np.maximum(np.atleast_2d(np.asarray(p, dtype=float)).copy(), 0.0)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    for n, row in enumerate(positions):
        for m in range(row.size):
            p[n, m] = min(p[n, m], max(max_power_ratio(m, row, p[n], alpha), 0.0))
    return p


def power_matrix(p: NDArray[np.float64]) -> NDArray[np.float64]:
    """Block-diagonal (M*N x N) matrix whose column n holds sqrt(p_n)."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    N, M = p.shape
    P = np.zeros((N * M, N))
    for n in range(N):
        P[n * M:(n + 1) * M, n] = np.sqrt(np.maximum(p[n], 0.0))
    return P
