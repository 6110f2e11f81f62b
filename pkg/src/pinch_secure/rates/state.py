"""The BCD iterate: beamformers, artificial noise, PA power ratios and positions."""

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from ..waveguide_power import power_matrix


@dataclass
class DesignState:
    """Design variables shared by every block of the BCD.

    Attributes:
        w: Information beamformers, shape (K, N); row k feeds user k
        V: Artificial-noise covariance, Hermitian PSD (N, N)
        p: PA power ratios, shape (N, M)
        x: PA axial positions, shape (N, M), ascending per waveguide
        budgets: Per-waveguide power budgets P_n^max, shape (N,)
    """
    w: NDArray[np.complex128]
    V: NDArray[np.complex128]
    p: NDArray[np.float64]
    x: NDArray[np.float64]
    budgets: NDArray[np.float64]

    @property
    def P(self) -> NDArray[np.float64]:
        return power_matrix(self.p)

    @property
    def n_users(self) -> int:
        return int(self.w.shape[0])

    def W(self, k: int) -> NDArray[np.complex128]:
        return np.outer(self.w[k], self.w[k].conj())

    def waveguide_power(self) -> NDArray[np.float64]:
        """Information plus AN power fed into each waveguide."""
        return np.sum(np.abs(self.w) ** 2, axis=0) + np.real(np.diag(self.V))

    def copy(self, **changes) -> "DesignState":
        fields = {
            "w": self.w.copy(),
            "V": self.V.copy(),
            "p": self.p.copy(),
            "x": self.x.copy(),
            "budgets": self.budgets.copy(),
        }
        fields.update(changes)
        return replace(self, **fields)

    def effective_beams(self) -> NDArray[np.complex128]:
        """P w_k for every user, shape (M*N, K)."""
        return self.P @ self.w.T

    def effective_noise(self) -> NDArray[np.complex128]:
        """P V P^H, shape (M*N, M*N)."""
        P = self.P
        return P @ self.V @ P.T


def budgets_ok(state: DesignState, p_max: float, tol: float = 1e-9) -> bool:
    """Per-waveguide and total budget check with relative slack."""
    used = state.waveguide_power()
    return bool(np.all(used <= state.budgets * (1 + tol) + tol) and state.budgets.sum() <= p_max * (1 + tol))
