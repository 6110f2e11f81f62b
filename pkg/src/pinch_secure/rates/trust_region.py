"""Exact complex trust-region subproblem.

Solves  min_{||d|| <= r}  (h + d)^H A (h + d)  for Hermitian A through the
eigendecomposition of A and a safeguarded root find on the secular equation
1/r - 1/||d(mu)|| = 0, d(mu) = -(A + mu I)^{-1} A h, including the hard case.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

_ZERO = 1e-13


@dataclass
class TrustRegionResult:
    delta: NDArray[np.complex128]
    value: float
    multiplier: float
    hard_case: bool
    kkt_residual: float


def _quadratic(A, h, delta) -> float:
    v = h + delta
    return float(np.real(v.conj() @ A @ v))


def solve_trust_region(
    A: NDArray[np.complex128], h: NDArray[np.complex128], radius: float
) -> TrustRegionResult:
    """Global minimizer of (h + d)^H A (h + d) over the ball ||d|| <= radius."""
    A = np.asarray(A, dtype=complex)
    h = np.asarray(h, dtype=complex)
    A = 0.5 * (A + A.conj().T)
    n = h.size
    if radius <= 0.0:
        return TrustRegionResult(np.zeros(n, dtype=complex), _quadratic(A, h, 0), 0.0, False, 0.0)

    # Work with d = radius * u, ||u|| <= 1, and a unit-scale quadratic
    b = A @ h
    A_u = radius**2 * A
    b_u = radius * b
    scale = max(np.linalg.norm(A_u, 2), np.linalg.norm(b_u), _ZERO)
    if scale <= _ZERO:
        return TrustRegionResult(np.zeros(n, dtype=complex), _quadratic(A, h, 0), 0.0, False, 0.0)
    A_u /= scale
    b_u /= scale

    eigvals, Q = np.linalg.eigh(A_u)
    beta = Q.conj().T @ b_u
    lam_min = float(eigvals[0])
    tol = 1e-12

    def _step(mu):
        return -beta / (eigvals + mu)

    # Interior solution (convex case): A u = -b with ||u|| <= 1
    if lam_min >= -tol:
        regular = eigvals > tol
        if np.all(np.abs(beta[~regular]) <= 1e-10):
            y = np.zeros(n, dtype=complex)
            y[regular] = -beta[regular] / eigvals[regular]
            if np.linalg.norm(y) <= 1.0:
                return _finish(A, h, b, radius, scale, Q, y, 0.0, False)

    lower = max(0.0, -lam_min)
    in_eigenspace = np.abs(eigvals - lam_min) <= 1e-10
    hard = np.all(np.abs(beta[in_eigenspace]) <= 1e-10)
    if hard:
        y = np.zeros(n, dtype=complex)
        outside = ~in_eigenspace
        y[outside] = -beta[outside] / (eigvals[outside] + lower)
        norm = np.linalg.norm(y)
        if norm <= 1.0:
            # Hard case: fill the remaining length along the bottom eigenvector
            index = int(np.flatnonzero(in_eigenspace)[0])
            y[index] = np.sqrt(max(1.0 - norm**2, 0.0))
            return _finish(A, h, b, radius, scale, Q, y, lower, True)

    def secular(mu):
        return 1.0 - 1.0 / np.linalg.norm(_step(mu))

    start = lower + 1e-12 * max(1.0, abs(lower))
    while secular(start) <= 0 and start - lower > 1e-300:
        start = lower + (start - lower) * 1e-3
    upper = lower + np.linalg.norm(beta) + 1.0
    mu = brentq(secular, start, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return _finish(A, h, b, radius, scale, Q, _step(mu), mu, False)


def _finish(A, h, b, radius, scale, Q, y, mu_scaled, hard_case) -> TrustRegionResult:
    u = Q @ y
    norm = np.linalg.norm(u)
    if norm > 1.0:
        u /= norm
    delta = radius * u
    mu = mu_scaled * scale / radius**2
    residual = float(np.linalg.norm(A @ delta + mu * delta + b))
    return TrustRegionResult(
        delta=delta,
        value=_quadratic(A, h, delta),
        multiplier=mu,
        hard_case=hard_case,
        kkt_residual=residual,
    )


def min_quadratic_over_ball(A, h, radius: float) -> float:
    return solve_trust_region(A, h, radius).value


def max_quadratic_over_ball(A, h, radius: float) -> float:
    return -solve_trust_region(-np.asarray(A, dtype=complex), h, radius).value
