"""Near-field channels between pinching antennas and ground receivers.

Every PA-to-receiver link l(n, m) = n*M + m carries the free-space spherical
wave sqrt(eta) exp(-j 2 pi d / lambda) / d, multiplied by the in-waveguide
phase exp(-j 2 pi x / lambda_g) accumulated from the feed point. For an
eavesdropper array the links are stacked antenna-major, l(n, m, t) = t*M*N + l(n, m).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .geometry import (
    BlockedRegion,
    Scenario,
    Waveguide,
    min_clearance_points,
    regions_for_observer,
    smoothed_gains,
)

logger = logging.getLogger(__name__)

_POSITION_TOL = 1e-9


class ChannelError(Exception):
    """Invalid PA layout or perturbation for channel construction."""
    pass


@dataclass
class ChannelFactorization:
    """Per-link blockage gain c = sqrt(eta), path loss f = 1/d and phase a = exp(-j theta)."""
    c: NDArray[np.float64]
    f: NDArray[np.float64]
    a: NDArray[np.complex128]
    theta: NDArray[np.float64]

    def recompose(self) -> NDArray[np.complex128]:
        return self.c * self.f * self.a


@dataclass
class ChannelVector:
    """Effective channel from all M*N PAs to one receiver."""
    h: NDArray[np.complex128]
    target: NDArray[np.float64]
    distances: NDArray[np.float64]
    zeta: NDArray[np.float64]
    factorization: ChannelFactorization

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.h))


@dataclass
class EAChannel:
    """Channel matrix (M*N x T) to an eavesdropper array, one column per antenna."""
    H: NDArray[np.complex128]
    positions: NDArray[np.float64]
    columns: List[ChannelVector]

    def stacked(self) -> ChannelFactorization:
        """Factorization over the antenna-major stacked index l(n, m, t)."""
        parts = [col.factorization for col in self.columns]
        return ChannelFactorization(
            c=np.concatenate([p.c for p in parts]),
            f=np.concatenate([p.f for p in parts]),
            a=np.concatenate([p.a for p in parts]),
            theta=np.concatenate([p.theta for p in parts]),
        )


@dataclass
class EAPerturbation:
    """Common location offset and orientation error of an eavesdropper array."""
    delta_e: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    delta_theta_deg: float = 0.0


@dataclass
class ChannelSet:
    users: List[ChannelVector]
    eavesdroppers: List[EAChannel]

    @property
    def user_matrix(self) -> NDArray[np.complex128]:
        """Stacked user channels, shape (M*N, K)."""
        return np.column_stack([u.h for u in self.users])


def check_positions(scenario: Scenario, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Validate an (N, M) PA position matrix against the waveguide extent."""
    x = np.asarray(x, dtype=float)
    if x.shape != (scenario.n_waveguides, scenario.pas_per_waveguide):
        raise ChannelError(
            f"Expected PA positions of shape {(scenario.n_waveguides, scenario.pas_per_waveguide)}, "
            f"got {x.shape}"
        )
    if np.any(x < -_POSITION_TOL) or np.any(x > scenario.waveguide_length + _POSITION_TOL):
        raise ChannelError("PA positions must lie on the waveguides")
    return x


def pa_points(scenario: Scenario, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """3-D PA coordinates flattened with index l(n, m) = n*M + m."""
    x = check_positions(scenario, x)
    return np.vstack([wg.pa_points(x[n]) for n, wg in enumerate(scenario.waveguides)])


def phase_vector(
    waveguide: Waveguide, pa_positions: NDArray[np.float64], guided_wavelength: float
) -> NDArray[np.complex128]:
    """In-waveguide phase exp(-j 2 pi x / lambda_g) of each PA on one waveguide."""
    x = np.asarray(pa_positions, dtype=float)
    if np.any(x < -_POSITION_TOL) or np.any(x > waveguide.length + _POSITION_TOL):
        raise ChannelError(f"PA positions outside waveguide {waveguide.index}")
    return np.exp(-2j * np.pi * x / guided_wavelength)


def factorize(
    scenario: Scenario,
    x: NDArray[np.float64],
    target: NDArray[np.float64],
    regions: Optional[Sequence[BlockedRegion]] = None,
) -> ChannelFactorization:
    """Blockage gain, path loss and total phase of every PA link to ``target``.

    Raises:
        ChannelError: If a PA coincides with the target
    """
    points = pa_points(scenario, x)
    target = np.asarray(target, dtype=float)
    distances = np.linalg.norm(points - target, axis=1)
    if np.any(distances <= 0.0):
        raise ChannelError(f"PA coincides with receiver at {target}")
    if regions is None:
        regions = regions_for_observer(target, scenario.blockages)
    zeta = smoothed_gains(min_clearance_points(points, regions), distances, scenario.theta_smooth)
    axial = np.asarray(x, dtype=float).reshape(-1)
    theta = 2 * np.pi * distances / scenario.wavelength + 2 * np.pi * axial / scenario.guided_wavelength
    return ChannelFactorization(
        c=np.sqrt(scenario.eta_hat * zeta),
        f=1.0 / distances,
        a=np.exp(-1j * theta),
        theta=theta,
    )


def recompose(factorization: ChannelFactorization) -> NDArray[np.complex128]:
    return factorization.recompose()


def _channel_to(
    scenario: Scenario,
    x: NDArray[np.float64],
    target: NDArray[np.float64],
    regions: Optional[Sequence[BlockedRegion]] = None,
) -> ChannelVector:
    fac = factorize(scenario, x, target, regions)
    return ChannelVector(
        h=fac.recompose(),
        target=np.asarray(target, dtype=float),
        distances=1.0 / fac.f,
        zeta=fac.c**2 / scenario.eta_hat,
        factorization=fac,
    )


def user_channel(scenario: Scenario, k: int, x: NDArray[np.float64]) -> ChannelVector:
    return _channel_to(scenario, x, scenario.users[k], scenario.user_regions[k])


def ea_antenna_positions(
    scenario: Scenario,
    g: int,
    delta_e: Optional[NDArray[np.float64]] = None,
    delta_theta_deg: float = 0.0,
) -> NDArray[np.float64]:
    """Antenna t = 1..T at e_g + delta_e + (t lambda / 2) [cos, sin, 0] of the perturbed heading.

    Raises:
        ChannelError: If the perturbation leaves the uncertainty set
    """
    eave = scenario.eavesdroppers[g]
    delta_e = np.zeros(3) if delta_e is None else np.asarray(delta_e, dtype=float).reshape(3)
    if np.linalg.norm(delta_e) > scenario.pos_err + 1e-12:
        raise ChannelError(
            f"Location offset {np.linalg.norm(delta_e):.4g} m exceeds radius {scenario.pos_err} m"
        )
    if abs(delta_theta_deg) > scenario.arc_err_deg + 1e-12:
        raise ChannelError(
            f"Orientation error {delta_theta_deg} deg exceeds {scenario.arc_err_deg} deg"
        )
    heading = np.deg2rad(eave.theta_deg + delta_theta_deg)
    direction = np.array([np.cos(heading), np.sin(heading), 0.0])
    t = np.arange(1, eave.antennas + 1)[:, None]
    return eave.position + delta_e + (t * scenario.wavelength / 2.0) * direction


def ea_channel(
    scenario: Scenario,
    g: int,
    x: NDArray[np.float64],
    perturbation: Optional[EAPerturbation] = None,
) -> EAChannel:
    """Eavesdropper channel with per-antenna blockage (partial shadowing allowed)."""
    perturbation = perturbation or EAPerturbation()
    positions = ea_antenna_positions(
        scenario, g, perturbation.delta_e, perturbation.delta_theta_deg
    )
    columns = [_channel_to(scenario, x, pos) for pos in positions]
    return EAChannel(H=np.column_stack([c.h for c in columns]), positions=positions, columns=columns)


def build_channel_set(scenario: Scenario, x: NDArray[np.float64]) -> ChannelSet:
    """Nominal channels of every user and eavesdropper for one PA layout."""
    return ChannelSet(
        users=[user_channel(scenario, k, x) for k in range(scenario.n_users)],
        eavesdroppers=[ea_channel(scenario, g, x) for g in range(scenario.n_eavesdroppers)],
    )


def channel_table(scenario: Scenario, x: NDArray[np.float64]) -> List[Dict[str, object]]:
    """Rows (receiver, n, m, t, re, im, gain, distance) for debugging dumps."""
    M = scenario.pas_per_waveguide
    channels = build_channel_set(scenario, x)
    rows: List[Dict[str, object]] = []

    def _emit(label: str, t, col: ChannelVector):
        for l, value in enumerate(col.h):
            rows.append({
                "receiver": label,
                "n": l // M,
                "m": l % M,
                "t": t,
                "re": float(value.real),
                "im": float(value.imag),
                "gain": float(col.zeta[l]),
                "distance": float(col.distances[l]),
            })

    for k, user in enumerate(channels.users):
        _emit(f"user{k}", "", user)
    for g, ea in enumerate(channels.eavesdroppers):
        for t, col in enumerate(ea.columns):
            _emit(f"ea{g}", t + 1, col)
    return rows
