"""Achievable rates, eavesdropping capacities and their worst-case evaluations."""

import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from numpy.typing import NDArray

from .state import DesignState
from .trust_region import max_quadratic_over_ball, min_quadratic_over_ball

logger = logging.getLogger(__name__)


class RateError(Exception):
    """Rate undefined, e.g. singular interference-plus-noise covariance."""
    pass


def user_rate(h: NDArray[np.complex128], state: DesignState, k: int, noise: float) -> float:
    """Rate of user k treating other users' streams and the AN as noise."""
    if noise <= 0:
        raise RateError("Noise power must be positive")
    beams = state.effective_beams()
    gains = np.abs(h.conj() @ beams) ** 2
    an = float(np.real(h.conj() @ state.effective_noise() @ h))
    interference = gains.sum() - gains[k] + an + noise
    return math.log2(1.0 + gains[k] / interference)


def _interference_covariance(H, state: DesignState, noise: float):
    T = H.shape[1]
    return H.conj().T @ state.effective_noise() @ H + noise * np.eye(T)


def ea_rate(H: NDArray[np.complex128], state: DesignState, k: int, noise: float) -> float:
    """log2 det(I + J^{-1} H^H P w_k w_k^H P^H H) with J the AN-plus-noise covariance.

    Raises:
        RateError: If J is not positive definite
    """
    H = H.reshape(-1, 1) if H.ndim == 1 else H
    J = _interference_covariance(H, state, noise)
    try:
        np.linalg.cholesky(J)
    except np.linalg.LinAlgError as e:
        raise RateError("Eavesdropper interference covariance is singular") from e
    a = H.conj().T @ state.effective_beams()[:, k]
    sign, logdet = np.linalg.slogdet(np.eye(J.shape[0]) + np.linalg.solve(J, np.outer(a, a.conj())))
    return float(logdet / math.log(2.0))


def ea_rate_quadratic(H: NDArray[np.complex128], state: DesignState, k: int, noise: float) -> float:
    """Rank-one form log2(1 + a^H J^{-1} a) of the eavesdropping capacity."""
    H = H.reshape(-1, 1) if H.ndim == 1 else H
    J = _interference_covariance(H, state, noise)
    a = H.conj().T @ state.effective_beams()[:, k]
    return math.log2(1.0 + float(np.real(a.conj() @ np.linalg.solve(J, a))))


def worst_case_user_bound(
    h_hat: NDArray[np.complex128], radius: float, state: DesignState, k: int, noise: float
) -> float:
    """Lower bound log2(1 + min signal / max interference) over ||dh|| <= radius."""
    beams = state.effective_beams()
    signal = np.outer(beams[:, k], beams[:, k].conj())
    others = beams @ beams.conj().T - signal + state.effective_noise()
    numerator = min_quadratic_over_ball(signal, h_hat, radius)
    denominator = max_quadratic_over_ball(others, h_hat, radius) + noise
    return math.log2(1.0 + max(numerator, 0.0) / denominator)


@dataclass
class RateReport:
    """Per-user nominal and worst-case rates and per-(k, g) leakage estimates."""
    nominal: List[float]
    worst_case: List[float]
    leakage: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 0)))
    leak_threshold: float = 1.0

    @property
    def sum_rate(self) -> float:
        return float(sum(self.worst_case))

    @property
    def leak_max(self) -> float:
        return float(self.leakage.max()) if self.leakage.size else 0.0

    @property
    def leak_margin(self) -> float:
        return self.leak_threshold - self.leak_max
