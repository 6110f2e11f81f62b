"""Real embedding of complex Hermitian matrices.

H = A + jB is PSD exactly when [[A, -B], [B, A]] is PSD; each eigenvalue of H
appears twice in the embedding.
"""

from typing import Union

import cvxpy as cp
import numpy as np
from numpy.typing import NDArray

HERMITIAN_TOL = 1e-10


class ConicError(Exception):
    """Malformed conic program or invalid embedding input."""
    pass


def hermitian_embed(H: NDArray[np.complex128], tol: float = HERMITIAN_TOL) -> NDArray[np.float64]:
    """Real symmetric 2n x 2n embedding of a Hermitian n x n matrix.

    Raises:
        ConicError: If H is not square or deviates from Hermitian by more than tol
    """
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    if H.shape[0] != H.shape[1]:
        raise ConicError(f"Hermitian embedding needs a square matrix, got {H.shape}")
    asymmetry = float(np.max(np.abs(H - H.conj().T))) if H.size else 0.0
    if asymmetry > tol:
        raise ConicError(f"Matrix is not Hermitian (asymmetry {asymmetry:.3e})")
    A, B = H.real, H.imag
    return np.block([[A, -B], [B, A]])


def hermitian_extract(S: NDArray[np.float64]) -> NDArray[np.complex128]:
    """Hermitian block recovered from a (possibly solver-perturbed) embedding."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0] // 2
    A = 0.5 * (S[:n, :n] + S[n:, n:])
    B = 0.5 * (S[n:, :n] - S[:n, n:])
    H = A + 1j * B
    return 0.5 * (H + H.conj().T)


def embed_expression(expr: Union[cp.Expression, NDArray]) -> cp.Expression:
    """Symmetric real embedding of a (complex) cvxpy matrix expression."""
    if not isinstance(expr, cp.Expression):
        expr = cp.Constant(np.asarray(expr))
    if expr.is_real():
        return 0.5 * (expr + expr.T)
    real, imag = cp.real(expr), cp.imag(expr)
    S = cp.bmat([[real, -imag], [imag, real]])
    return 0.5 * (S + S.T)
