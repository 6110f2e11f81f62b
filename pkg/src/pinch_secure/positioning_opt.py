"""Two-stage PA positioning at fixed beamformers, artificial noise and power ratios.

Stage 1 moves PAs on the meter scale. Channel phases stay frozen at the stage
start and every link amplitude sqrt(eta zeta) / d is boxed between a concave
lower model and a convex upper model, built from distance slacks, the active
shadow planes and the logistic blockage gain. The robust rate terms and the
leakage LMIs are written in the boxed amplitudes.

Stage 2 refines positions within a few wavelengths with amplitudes frozen.
Each receiver's phase vector is lifted to a unit-diagonal PSD matrix A, the
rate and leakage LMIs become linear in A, and the tie between the entries of
A and the phase differences (affine in x) is a penalty bounded above by a
Lipschitz-gradient majorant.

Both stages only accept layouts whose evaluated objective does not drop.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.special import expit, log_expit

from .beamforming_opt import OptimizationError, _cell, _col, _row
from .channel import build_channel_set, ea_antenna_positions, factorize
from .config import Settings, get_settings
from .conic import ConicProgram, Solution, solve
from .constants import LN2
from .geometry import BlockedRegion, Scenario, Waveguide, regions_for_observer
from .rates import (
    DesignState,
    RobustnessBounds,
    leakage_certificate,
    leakage_lmi_margin,
    max_quadratic_over_ball,
    robust_objective,
    robustness_bounds,
    worst_case_user_bound,
)
from .scaling import ProblemScale
from .waveguide_power import attenuation_constant, clamp_to_feasible

logger = logging.getLogger(__name__)

# Largest growth of a link amplitude upper model in one stage-1 step
_GAIN_CAP = math.log(1e3)
_SHRINK = 0.5
_MIN_STEP_M = 1e-3

# Coefficients of the quadratic terms in the phase-penalty majorant
PHASE_CURVATURE = (2.0, 2.0, 4.0)


# ============ Clearance along a waveguide ============

@dataclass
class LinkPlanes:
    """Clearance of a PA on one waveguide as a function of its axial position.

    Region q contributes max_i (slopes[q][i] * x + intercepts[q][i]); the
    clearance is the minimum over regions.
    """
    slopes: List[NDArray[np.float64]]
    intercepts: List[NDArray[np.float64]]

    @classmethod
    def from_regions(cls, regions: Sequence[BlockedRegion], waveguide: Waveguide) -> "LinkPlanes":
        slopes, intercepts = [], []
        for region in regions:
            slopes.append(region.normals[:, 0].copy())
            intercepts.append(
                region.normals[:, 1] * waveguide.feed_y
                + region.normals[:, 2] * waveguide.height
                - region.offsets
            )
        return cls(slopes=slopes, intercepts=intercepts)

    @property
    def n_regions(self) -> int:
        return len(self.slopes)

    def region_values(self, x) -> NDArray[np.float64]:
        """Clearance against each region, shape (Q,) + shape(x)."""
        x = np.asarray(x, dtype=float)
        return np.array([
            np.max(np.multiply.outer(x, s) + b, axis=-1)
            for s, b in zip(self.slopes, self.intercepts)
        ])

    def clearance(self, x):
        return self.region_values(x).min(axis=0)

    def active_planes(self, x0: float) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Per-region clearance at x0 and the slope of the plane attaining it."""
        values = np.empty(self.n_regions)
        slopes = np.empty(self.n_regions)
        for q, (s, b) in enumerate(zip(self.slopes, self.intercepts)):
            planes = s * x0 + b
            i = int(np.argmax(planes))
            values[q], slopes[q] = planes[i], s[i]
        return values, slopes

    def active_region(self, x0: float) -> int:
        return int(np.argmin(self.region_values(x0)))

    def lower_bound(self, x, x0: float):
        """Concave minorant min_q [d_q(x0) + s_q (x - x0)] from the active planes, tight at x0."""
        values, slopes = self.active_planes(x0)
        x = np.asarray(x, dtype=float)
        shape = (-1,) + (1,) * x.ndim
        return np.min(values.reshape(shape) + np.multiply.outer(slopes, x - x0), axis=0)

    def upper_bound(self, x, x0: float):
        """Convex majorant: clearance against the region that is most critical at x0."""
        q = self.active_region(x0)
        x = np.asarray(x, dtype=float)
        return np.max(np.multiply.outer(x, self.slopes[q]) + self.intercepts[q], axis=-1)


@dataclass
class Receiver:
    """A ground antenna seen from every PA: a user or one element of an eavesdropper array."""
    key: str
    target: NDArray[np.float64]
    regions: List[BlockedRegion]
    beta: NDArray[np.float64]
    planes: List[LinkPlanes]
    user: Optional[int] = None
    eavesdropper: Optional[Tuple[int, int]] = None


def _receiver(scenario: Scenario, key: str, target, regions: Sequence[BlockedRegion], **role) -> Receiver:
    target = np.asarray(target, dtype=float)
    M = scenario.pas_per_waveguide
    beta = np.concatenate([
        np.full(M, (wg.feed_y - target[1]) ** 2 + (wg.height - target[2]) ** 2)
        for wg in scenario.waveguides
    ])
    planes = [LinkPlanes.from_regions(regions, wg) for wg in scenario.waveguides] if regions else []
    return Receiver(key=key, target=target, regions=list(regions), beta=beta, planes=planes, **role)


def build_receivers(scenario: Scenario) -> List[Receiver]:
    receivers = [
        _receiver(scenario, f"u{k}", target, scenario.user_regions[k], user=k)
        for k, target in enumerate(scenario.users)
    ]
    for g in range(scenario.n_eavesdroppers):
        for t, position in enumerate(ea_antenna_positions(scenario, g)):
            receivers.append(_receiver(
                scenario, f"e{g}.{t}", position,
                regions_for_observer(position, scenario.blockages), eavesdropper=(g, t),
            ))
    return receivers


# ============ Fixed blocks and layout evaluation ============

@dataclass
class PositioningContext:
    """Beamformers, AN and power ratios held fixed while PAs move, in normalised units."""
    scenario: Scenario
    state: DesignState
    scale: ProblemScale
    receivers: List[Receiver]
    beams: NDArray[np.complex128]
    an_cov: NDArray[np.complex128]
    alpha: float
    settings: Settings

    @classmethod
    def build(
        cls, scenario: Scenario, state: DesignState, settings: Optional[Settings] = None
    ) -> "PositioningContext":
        scale = ProblemScale.from_scenario(scenario)
        alpha = attenuation_constant(scenario)
        state = state.copy(p=clamp_to_feasible(state.p, state.x, alpha))
        return cls(
            scenario=scenario,
            state=state,
            scale=scale,
            receivers=build_receivers(scenario),
            beams=state.effective_beams().T / math.sqrt(scale.power),
            an_cov=state.effective_noise() / scale.power,
            alpha=alpha,
            settings=settings or get_settings(),
        )

    @property
    def n_links(self) -> int:
        return self.scenario.n_links

    @property
    def users(self) -> List[Receiver]:
        return [r for r in self.receivers if r.user is not None]

    def eavesdropper_antennas(self, g: int) -> List[Receiver]:
        return [r for r in self.receivers if r.eavesdropper is not None and r.eavesdropper[0] == g]

    @property
    def threshold(self) -> float:
        return 2.0 ** self.scenario.r_th - 1.0

    @property
    def noise_user(self) -> float:
        return self.scale.noise_units(self.scenario.noise_user)

    @property
    def noise_ea(self) -> float:
        return self.scale.noise_units(self.scenario.noise_ea)

    def signal(self, k: int) -> NDArray[np.complex128]:
        return np.outer(self.beams[k], self.beams[k].conj())

    def interference(self, k: int) -> NDArray[np.complex128]:
        """AN plus every other user's stream as seen by user k."""
        total = self.an_cov + sum(self.signal(j) for j in range(self.beams.shape[0]) if j != k)
        return np.asarray(total, dtype=complex)

    def leakage_matrix(self, k: int) -> NDArray[np.complex128]:
        return self.threshold * self.an_cov - self.signal(k)


def link_response(
    ctx: PositioningContext, receiver: Receiver, x: NDArray[np.float64]
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Normalised link amplitudes and total phases from every PA to ``receiver``."""
    fac = factorize(ctx.scenario, x, receiver.target, receiver.regions)
    return fac.c * fac.f * ctx.scale.channel, fac.theta


def phase_slopes(ctx: PositioningContext, receiver: Receiver, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Derivative of each link's total phase with respect to its PA position."""
    scenario = ctx.scenario
    offset = np.asarray(x, dtype=float).reshape(-1) - receiver.target[0]
    distance = np.sqrt(offset ** 2 + receiver.beta)
    return 2 * np.pi * offset / (distance * scenario.wavelength) + 2 * np.pi / scenario.guided_wavelength


@dataclass
class LayoutValue:
    """Robust sum rate (bits/s/Hz) and smallest leakage LMI margin of a layout."""
    objective: float
    margin: float

    def certified(self, tol: float) -> bool:
        return self.margin >= -tol


def state_at(ctx: PositioningContext, x: NDArray[np.float64]) -> DesignState:
    """The fixed design moved to layout x, power ratios clipped to what x lets PAs extract."""
    x = np.asarray(x, dtype=float)
    return ctx.state.copy(x=x.copy(), p=clamp_to_feasible(ctx.state.p, x, ctx.alpha))


def _frozen_channels(ctx: PositioningContext, x, phases: Dict[str, NDArray[np.float64]]):
    users, eavesdroppers = [], []
    for rec in ctx.users:
        amplitude, _ = link_response(ctx, rec, x)
        users.append(amplitude / ctx.scale.channel * np.exp(-1j * phases[rec.key]))
    for g in range(ctx.scenario.n_eavesdroppers):
        columns = []
        for rec in ctx.eavesdropper_antennas(g):
            amplitude, _ = link_response(ctx, rec, x)
            columns.append(amplitude / ctx.scale.channel * np.exp(-1j * phases[rec.key]))
        eavesdroppers.append(np.column_stack(columns))
    return users, eavesdroppers


def evaluate_layout(
    ctx: PositioningContext,
    x: NDArray[np.float64],
    phases: Optional[Dict[str, NDArray[np.float64]]] = None,
    bounds: Optional[RobustnessBounds] = None,
) -> LayoutValue:
    """Objective and leakage margin of the fixed design at layout x.

    With ``phases`` the channel phases stay frozen and only the amplitudes follow
    x; ``bounds`` then supplies the (frozen) uncertainty radii.
    """
    scenario = ctx.scenario
    state = state_at(ctx, x)
    if phases is None:
        channels = build_channel_set(scenario, x)
        bounds = bounds or robustness_bounds(scenario, x, channels)
        return LayoutValue(
            objective=robust_objective(scenario, state, channels, bounds),
            margin=leakage_certificate(scenario, state, channels, bounds, ctx.scale),
        )
    if bounds is None:
        raise OptimizationError("Frozen-phase evaluation needs uncertainty radii")
    users, eavesdroppers = _frozen_channels(ctx, x, phases)
    objective = sum(
        worst_case_user_bound(h, bounds.user[k], state, k, scenario.noise_user)
        for k, h in enumerate(users)
    )
    beams, noise_cov = state.effective_beams(), state.effective_noise()
    margin = np.inf
    for g, H in enumerate(eavesdroppers):
        for k in range(state.n_users):
            margin = min(margin, leakage_lmi_margin(
                H, beams[:, k], noise_cov, bounds.eavesdropper[g], scenario.r_th, scenario.noise_ea, ctx.scale,
            ))
    return LayoutValue(objective=float(objective), margin=float(margin))


def snap_layout(scenario: Scenario, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Project solver output onto C1/C2 exactly: positions in [0, L], spacing at least gamma."""
    length, gap = scenario.waveguide_length, scenario.spacing
    x = np.clip(np.array(x, dtype=float), 0.0, length)
    for row in x:
        for m in range(1, row.size):
            row[m] = max(row[m], row[m - 1] + gap)
        row[-1] = min(row[-1], length)
        for m in range(row.size - 2, -1, -1):
            row[m] = min(row[m], row[m + 1] - gap)
    return x


def _layout_constraints(
    prog: ConicProgram, ctx: PositioningContext, x, center: NDArray[np.float64], radius: float, stage: str
):
    """C1, C2, a box trust region, and C3 at the fixed power ratios."""
    scenario = ctx.scenario
    N, M = scenario.n_waveguides, scenario.pas_per_waveguide
    prog.add([x >= 0.0, x <= scenario.waveguide_length], tag="C1")
    if M > 1:
        rows = []
        for n in range(N):
            for m in range(M - 1):
                row = np.zeros(N * M)
                row[n * M + m], row[n * M + m + 1] = -1.0, 1.0
                rows.append(row)
        prog.add(np.array(rows) @ x >= scenario.spacing, tag="C2")
    prog.add([x <= center + radius, x >= center - radius], tag=f"{stage}:trust")

    # Multiplying C3 by exp(2 alpha x_m) leaves sum_{i<=m} p_i exp(2 alpha x_i) <= 1, convex in x
    if ctx.alpha > 0:
        p = ctx.state.p
        for n in range(N):
            for m in range(M):
                weights = p[n, :m + 1]
                if weights.sum() <= 0:
                    continue
                prog.add(
                    weights @ cp.exp(2.0 * ctx.alpha * x[n * M:n * M + m + 1]) <= 1.0,
                    tag=f"C3:{n},{m}",
                )


def _hermitian_sqrt(X: NDArray[np.complex128]) -> NDArray[np.complex128]:
    eigvals, Q = np.linalg.eigh(0.5 * (X + X.conj().T))
    return (Q * np.sqrt(np.maximum(eigvals, 0.0))) @ Q.conj().T


@dataclass
class PositionTraceRow:
    stage: int
    n: int
    m: int
    x_m: float
    p_nm: float


@dataclass
class StageTraceRow:
    stage: int
    iteration: int
    objective: float
    surrogate: float
    step_m: float
    solve_ms: float
    accepted: bool
    gamma_residual: float = 0.0


@dataclass
class StageResult:
    """Outcome of one positioning stage; ``layouts`` lists every accepted layout in order."""
    x: NDArray[np.float64]
    value: LayoutValue
    trace: List[StageTraceRow]
    layouts: List[NDArray[np.float64]]
    status: str
    gamma_residual: float = 0.0
    rho: float = 0.0


# ============ Stage 1 ============

@dataclass
class Stage1Iterate:
    """Anchor of one stage-1 MM iteration, normalised units.

    Attributes:
        x: PA positions (N, M)
        amplitudes: Link amplitudes per receiver key, (L,)
        phases: Channel phases frozen for the whole stage, per receiver key
        iota_d: Exact worst-case interference plus AN per user at the frozen phases
        value: Frozen-phase objective and leakage margin
    """
    x: NDArray[np.float64]
    amplitudes: Dict[str, NDArray[np.float64]]
    phases: Dict[str, NDArray[np.float64]]
    iota_d: NDArray[np.float64]
    value: LayoutValue

    @classmethod
    def at(
        cls,
        ctx: PositioningContext,
        x: NDArray[np.float64],
        phases: Dict[str, NDArray[np.float64]],
        bounds: RobustnessBounds,
    ) -> "Stage1Iterate":
        amplitudes = {rec.key: link_response(ctx, rec, x)[0] for rec in ctx.receivers}
        iota_d = np.array([
            max_quadratic_over_ball(
                ctx.interference(k),
                amplitudes[rec.key] * np.exp(-1j * phases[rec.key]),
                bounds.user[k] * ctx.scale.channel,
            )
            for k, rec in enumerate(ctx.users)
        ])
        return cls(
            x=np.asarray(x, dtype=float).copy(),
            amplitudes=amplitudes,
            phases=phases,
            iota_d=np.maximum(iota_d, 0.0),
            value=evaluate_layout(ctx, x, phases, bounds),
        )


def _amplitude_box(
    prog: ConicProgram,
    ctx: PositioningContext,
    rec: Receiver,
    x,
    x0: NDArray[np.float64],
    reference: float,
):
    """Amplitude variables of one receiver's links with their lower and upper models.

    Returns the amplitude variable and the normalised box width, which is zero
    at the anchor.
    """
    scenario, settings = ctx.scenario, ctx.settings
    L = x0.size
    M = scenario.pas_per_waveguide
    key = rec.key
    theta = scenario.theta_smooth

    offset = x0 - rec.target[0]
    d0 = np.sqrt(offset ** 2 + rec.beta)
    c0 = math.log(ctx.scale.channel * math.sqrt(scenario.eta_hat))

    b = prog.vector(f"b[{key}]", L, nonneg=True)
    r_up = prog.vector(f"r_up[{key}]", L, nonneg=True)
    r_low = prog.vector(f"r_low[{key}]", L)
    lam_lo = prog.vector(f"lam_lo[{key}]", L)
    lam_hi = prog.vector(f"lam_hi[{key}]", L)
    growth = prog.vector(f"growth[{key}]", L, nonneg=True)

    # r_low <= d(x) <= r_up
    prog.add(cp.norm(cp.vstack([x - rec.target[0], np.sqrt(rec.beta)]), 2, axis=0) <= r_up, tag=f"C11a:{key}")
    prog.add([r_low <= d0 + (offset / d0) * (x - x0), r_low >= 0.5 * np.sqrt(rec.beta)], tag=f"C11b:{key}")

    # -log r_up linearised from above and -log r_low as is bound -log d on both sides
    log_path_lo = -np.log(d0) - (r_up - d0) / d0
    log_path_hi = -cp.log(r_low)

    if not rec.planes:
        lam0 = c0 - np.log(d0)
        live = np.arange(L)
        prog.add(lam_lo <= c0 + log_path_lo, tag=f"C15a:{key}")
        prog.add(c0 + log_path_hi <= lam_hi, tag=f"C15b:{key}")
    else:
        mu0 = np.array([float(rec.planes[l // M].clearance(x0[l])) for l in range(L)])
        a0 = mu0 / d0
        lam0 = c0 + 0.5 * log_expit(theta * a0) - np.log(d0)
        live = np.flatnonzero(theta * a0 >= math.log(settings.blockage_floor))

        # Lower model: alpha_lo * r <= mu_LB for r = r_up and r = r_low gives alpha_lo <= mu / d
        if live.size:
            active = [rec.planes[l // M].active_planes(x0[l]) for l in live]
            values = np.array([v for v, _ in active])
            slopes = np.array([s for _, s in active])
            alpha_lo = prog.vector(f"alpha_lo[{key}]", live.size)
            softplus = prog.vector(f"softplus[{key}]", live.size)
            a0l, d0l, x_live = a0[live], d0[live], x[live]
            for r in (r_up[live], r_low[live]):
                tangent = (a0l - d0l) ** 2 / 4 + (a0l - d0l) / 2 * ((alpha_lo - a0l) - (r - d0l))
                bilinear = cp.square(alpha_lo + r) / 4 - tangent
                for q in range(values.shape[1]):
                    prog.add(
                        bilinear <= values[:, q] + cp.multiply(slopes[:, q], x_live - x0[live]),
                        tag=f"C13c:{key}",
                    )
            prog.add(alpha_lo >= math.log(settings.blockage_floor) / theta, tag=f"floor:{key}")
            prog.add_softplus_leq(softplus, alpha_lo, theta, tag=f"C13a:{key}")
            prog.add(
                lam_lo[live] <= c0 - 0.5 * LN2 * softplus + log_path_lo[live], tag=f"C15a:{key}"
            )

        # Upper model: alpha_hi * r >= mu_UB for both r gives alpha_hi >= mu / d
        alpha_hi = prog.vector(f"alpha_hi[{key}]", L)
        for l in range(L):
            planes = rec.planes[l // M]
            q = planes.active_region(x0[l])
            s = a0[l] + d0[l]
            for r in (r_up[l], r_low[l]):
                tangent = s ** 2 / 4 + s / 2 * ((alpha_hi[l] - a0[l]) + (r - d0[l]))
                prog.add(
                    cp.square(alpha_hi[l] - r) / 4 + x[l] * planes.slopes[q] + planes.intercepts[q] - tangent <= 0,
                    tag=f"C13d:{key}",
                )
        gain_tangent = log_expit(theta * a0) + theta * expit(-theta * a0) * (alpha_hi - a0)
        prog.add(c0 + 0.5 * gain_tangent + log_path_hi <= lam_hi, tag=f"C13b:{key}")

    b0 = np.exp(lam0)
    prog.add(lam_hi <= lam0 + _GAIN_CAP, tag=f"gain-cap:{key}")
    prog.add(cp.exp(lam_hi - lam0) <= growth, tag=f"upper:{key}")
    upper = cp.multiply(b0, growth)
    prog.add([b <= upper, b <= np.exp(c0) / np.sqrt(rec.beta)], tag=f"box:{key}")
    lower = cp.multiply(b0[live], 1.0 + lam_lo[live] - lam0[live])
    if live.size:
        prog.add(b[live] >= lower, tag=f"box:{key}")
    width = (cp.sum(upper) - (cp.sum(lower) if live.size else 0.0)) / reference
    return b, width


def stage1_build(
    ctx: PositioningContext,
    anchor: Stage1Iterate,
    bounds: RobustnessBounds,
    step: Optional[float] = None,
) -> ConicProgram:
    """Convex stage-1 program around ``anchor`` with beams, AN and ratios fixed.

    Raises:
        OptimizationError: If the anchor layout violates C1 or C2
    """
    scenario, settings = ctx.scenario, ctx.settings
    step = settings.stage1_step_m if step is None else step
    x0 = anchor.x.reshape(-1)
    if not np.allclose(snap_layout(scenario, anchor.x), anchor.x, rtol=0.0, atol=1e-9):
        raise OptimizationError("Stage-1 anchor violates the waveguide extent or the PA spacing")

    K, L = len(ctx.users), ctx.n_links
    sigma2, sigma2_e = ctx.noise_user, ctx.noise_ea
    eye = np.eye(L)
    scale = ctx.scale.channel

    prog = ConicProgram("stage1")
    x = prog.vector("x", L)
    _layout_constraints(prog, ctx, x, x0, step, "stage1")

    reference = max(float(np.max(a)) for a in anchor.amplitudes.values())
    amplitudes, widths = {}, []
    for rec in ctx.receivers:
        amplitudes[rec.key], width = _amplitude_box(prog, ctx, rec, x, x0, reference)
        widths.append(width)

    iota_n = prog.vector("iota_n", K)
    iota_d = prog.vector("iota_d", K, nonneg=True)
    for k, rec in enumerate(ctx.users):
        phase = np.exp(-1j * anchor.phases[rec.key])
        h = cp.multiply(phase, amplitudes[rec.key])
        h0 = phase * anchor.amplitudes[rec.key]
        radius = bounds.user[k] * scale
        Y = ctx.signal(k)
        Yh, Yh0 = Y @ h, Y @ h0
        # h^H Y h is convex in h: its tangent at h0 is a global minorant
        minorant = 2 * cp.real(cp.sum(cp.multiply(Yh0.conj(), h))) - float(np.real(np.vdot(h0, Yh0)))
        R = _hermitian_sqrt(ctx.interference(k))
        Rh = R @ h
        if radius > 0:
            delta7 = prog.scalar(f"delta_c7_{k}", nonneg=True)
            delta8 = prog.scalar(f"delta_c8_{k}", nonneg=True)
            prog.add_psd(cp.bmat([
                [Y + delta7 * eye, _col(Yh, L)],
                [_row(cp.conj(Yh), L), _cell(minorant - delta7 * radius ** 2 - iota_n[k])],
            ]), tag=f"C7:{k}")
            prog.add_psd(cp.bmat([
                [_cell(iota_d[k] - delta8 * radius ** 2), np.zeros((1, L)), _row(cp.conj(Rh), L)],
                [np.zeros((L, 1)), delta8 * eye, R.conj().T],
                [_col(Rh, L), R, eye],
            ]), tag=f"C8:{k}")
        else:
            prog.add(iota_n[k] <= minorant, tag=f"C7:{k}")
            prog.add_psd(cp.bmat([
                [_cell(iota_d[k]), _row(cp.conj(Rh), L)],
                [_col(Rh, L), eye],
            ]), tag=f"C8:{k}")

    for g in range(scenario.n_eavesdroppers):
        antennas = ctx.eavesdropper_antennas(g)
        T = len(antennas)
        phase = np.column_stack([np.exp(-1j * anchor.phases[a.key]) for a in antennas])
        H = cp.multiply(phase, cp.vstack([amplitudes[a.key] for a in antennas]).T)
        H0 = phase * np.column_stack([anchor.amplitudes[a.key] for a in antennas])
        radius = bounds.eavesdropper[g] * scale
        M_plus = ctx.threshold * ctx.an_cov
        for k in range(K):
            y = ctx.beams[k]
            Mk = ctx.leakage_matrix(k)
            # H^H M+ H dominates its tangent at H0; the rank-one -H^H y y^H H enters by a Schur row
            cross = (H0.conj().T @ M_plus) @ H
            tangent = cross + cross.H - H0.conj().T @ M_plus @ H0
            corner = ctx.threshold * sigma2_e * np.eye(T) + tangent
            u = H.H @ y
            HM = H.H @ Mk
            if radius > 0:
                delta = prog.scalar(f"delta_c6_{k}_{g}", nonneg=True)
                block = cp.bmat([
                    [np.ones((1, 1)), _row(cp.conj(u), T), np.zeros((1, L))],
                    [_col(u, T), corner - delta * np.eye(T), HM],
                    [np.zeros((L, 1)), HM.H, Mk + (delta / radius ** 2) * eye],
                ])
            else:
                block = cp.bmat([[np.ones((1, 1)), _row(cp.conj(u), T)], [_col(u, T), corner]])
            prog.add_psd(block, tag=f"C6:{k},{g}")

    for k in range(K):
        prog.add_log_term(1.0, iota_n[k] + iota_d[k] + sigma2, tag=f"obj:{k}")
        base = anchor.iota_d[k] + sigma2
        prog.add_objective(-math.log2(base) - (iota_d[k] - anchor.iota_d[k]) / (base * LN2))
    prog.add_penalty(sum(widths), weight=settings.box_penalty)
    return prog


def stage1_iterate(
    ctx: PositioningContext,
    x: NDArray[np.float64],
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> StageResult:
    """Meter-scale MM over ``stage1_build``; returns the coarse layout.

    Candidates are judged on the frozen-phase objective; a candidate that lowers
    it or breaks the leakage margin is rejected and the trust region shrinks.
    """
    settings = ctx.settings
    max_iter = settings.stage1_max_iter if max_iter is None else max_iter
    tol = settings.mm_tol_bits if tol is None else tol
    scenario = ctx.scenario
    x = snap_layout(scenario, x)
    bounds = robustness_bounds(scenario, x)
    phases = {rec.key: link_response(ctx, rec, x)[1] for rec in ctx.receivers}
    anchor = Stage1Iterate.at(ctx, x, phases, bounds)
    step = settings.stage1_step_m
    trace: List[StageTraceRow] = []
    layouts = [anchor.x.copy()]
    status = "max_iter"

    for i in range(max_iter):
        start = time.perf_counter()
        solution = solve(stage1_build(ctx, anchor, bounds, step), settings)
        elapsed = (time.perf_counter() - start) * 1e3
        if not solution.ok:
            logger.warning(f"Stage 1 iteration {i}: solver status {solution.status}, shrinking step")
            step *= _SHRINK
            if step < _MIN_STEP_M:
                status = "solver_failure"
                break
            continue
        x_new = snap_layout(scenario, solution.value("x").reshape(anchor.x.shape))
        candidate = Stage1Iterate.at(ctx, x_new, phases, bounds)
        current = anchor.value.objective
        slack = settings.monotone_slack * max(1.0, abs(current))
        accepted = (
            candidate.value.certified(settings.certificate_tol)
            and candidate.value.objective >= current - slack
        )
        trace.append(StageTraceRow(
            stage=1, iteration=i, objective=candidate.value.objective, surrogate=solution.objective,
            step_m=step, solve_ms=elapsed, accepted=accepted,
        ))
        if not accepted:
            logger.debug(
                f"Stage 1 iteration {i}: rejected ({candidate.value.objective:.5f} < {current:.5f} "
                f"or margin {candidate.value.margin:.2e}), step {step:.3g} m"
            )
            step *= _SHRINK
            if step < _MIN_STEP_M:
                status = "stalled"
                break
            continue
        moved = float(np.max(np.abs(candidate.x - anchor.x)))
        gain = candidate.value.objective - current
        anchor = candidate
        layouts.append(anchor.x.copy())
        logger.debug(f"Stage 1 iteration {i}: objective {current + gain:.5f}, moved {moved:.4f} m")
        if gain < tol:
            status = "converged"
            break

    logger.info(f"Stage 1 finished ({status}): frozen-phase objective {anchor.value.objective:.4f}")
    return StageResult(
        x=anchor.x, value=anchor.value, trace=trace, layouts=layouts, status=status,
    )


# ============ Stage 2 ============

def phase_residual(R, I, theta_hat):
    """Gamma = (Re A - cos th)^2 + (Im A + sin th)^2; zero iff A = exp(-j th)."""
    return (R - np.cos(theta_hat)) ** 2 + (I + np.sin(theta_hat)) ** 2


def phase_gradient(R0, I0, theta0):
    """Gradient of the phase residual with respect to (Re A, Im A, th)."""
    return (
        2 * (R0 - np.cos(theta0)),
        2 * (I0 + np.sin(theta0)),
        2 * R0 * np.sin(theta0) + 2 * I0 * np.cos(theta0),
    )


def phase_majorant(R, I, theta_hat, R0, I0, theta0):
    """Upper bound of the phase residual that touches it at (R0, I0, theta0)."""
    gR, gI, gT = phase_gradient(R0, I0, theta0)
    cR, cI, cT = PHASE_CURVATURE
    dR, dI, dT = R - R0, I - I0, theta_hat - theta0
    return (
        phase_residual(R0, I0, theta0)
        + gR * dR + gI * dI + gT * dT
        + cR * dR ** 2 + cI * dI ** 2 + cT * dT ** 2
    )


@dataclass
class LiftedPhases:
    """Phase lifting of one receiver group: the users' own vector or a whole eavesdropper array."""
    key: str
    receivers: List[Receiver]
    link_index: NDArray[np.int64]

    @property
    def size(self) -> int:
        return int(self.link_index.size)


def _lifted_groups(ctx: PositioningContext) -> List[LiftedPhases]:
    L = ctx.n_links
    groups = [LiftedPhases(rec.key, [rec], np.arange(L)) for rec in ctx.users]
    for g in range(ctx.scenario.n_eavesdroppers):
        antennas = ctx.eavesdropper_antennas(g)
        groups.append(LiftedPhases(f"e{g}", antennas, np.tile(np.arange(L), len(antennas))))
    return groups


@dataclass
class Stage2Iterate:
    """Anchor of one stage-2 MM iteration.

    Attributes:
        x: PA positions (N, M)
        lifted: Lifted phase matrix per group key (user key or e<g>)
        theta: Exact phases at x per group key, stacked antenna-major for arrays
        slopes: Phase derivatives at x per group key
        iota_d: Worst-case interference anchor per user
    """
    x: NDArray[np.float64]
    lifted: Dict[str, NDArray[np.complex128]]
    theta: Dict[str, NDArray[np.float64]]
    slopes: Dict[str, NDArray[np.float64]]
    iota_d: NDArray[np.float64]

    @staticmethod
    def phases_at(ctx: PositioningContext, groups: List[LiftedPhases], x):
        theta, slopes = {}, {}
        for group in groups:
            theta[group.key] = np.concatenate([link_response(ctx, r, x)[1] for r in group.receivers])
            slopes[group.key] = np.concatenate([phase_slopes(ctx, r, x) for r in group.receivers])
        return theta, slopes

    @classmethod
    def exact(
        cls,
        ctx: PositioningContext,
        groups: List[LiftedPhases],
        x: NDArray[np.float64],
        amplitudes: Dict[str, NDArray[np.float64]],
        bounds: RobustnessBounds,
    ) -> "Stage2Iterate":
        theta, slopes = cls.phases_at(ctx, groups, x)
        lifted = {}
        for key, th in theta.items():
            a = np.exp(-1j * th)
            lifted[key] = np.outer(a, a.conj())
        iota_d = np.array([
            max(max_quadratic_over_ball(
                ctx.interference(k),
                amplitudes[rec.key] * np.exp(-1j * theta[rec.key]),
                bounds.user[k] * ctx.scale.channel,
            ), 0.0)
            for k, rec in enumerate(ctx.users)
        ])
        return cls(x=np.asarray(x, dtype=float).copy(), lifted=lifted, theta=theta, slopes=slopes, iota_d=iota_d)

    def gamma_residual(self) -> float:
        """Largest phase residual between the lifted matrices and the exact phases."""
        worst = 0.0
        for key, A in self.lifted.items():
            rows, cols = np.triu_indices(A.shape[0], 1)
            if rows.size == 0:
                continue
            theta_hat = self.theta[key][rows] - self.theta[key][cols]
            worst = max(worst, float(np.max(phase_residual(A.real[rows, cols], A.imag[rows, cols], theta_hat))))
        return worst


def _phase_penalty(
    A, anchor_A: NDArray[np.complex128], theta0: NDArray[np.float64], slopes: NDArray[np.float64],
    link_index: NDArray[np.int64], x, x_anchor: NDArray[np.float64],
):
    """Majorant of the summed phase residuals over the strict upper triangle of A."""
    n = anchor_A.shape[0]
    rows, cols = np.triu_indices(n, 1)
    pairs = rows.size
    selector = sp.csr_matrix((np.ones(pairs), (np.arange(pairs), rows + n * cols)), shape=(pairs, n * n))
    R = selector @ cp.reshape(cp.real(A), (n * n,), order="F")
    I = selector @ cp.reshape(cp.imag(A), (n * n,), order="F")
    G = np.zeros((pairs, x_anchor.size))
    np.add.at(G, (np.arange(pairs), link_index[rows]), slopes[rows])
    np.add.at(G, (np.arange(pairs), link_index[cols]), -slopes[cols])

    R0, I0 = anchor_A.real[rows, cols], anchor_A.imag[rows, cols]
    th0 = theta0[rows] - theta0[cols]
    gR, gI, gT = phase_gradient(R0, I0, th0)
    cR, cI, cT = PHASE_CURVATURE
    dT = G @ (x - x_anchor)
    return cp.sum(
        phase_residual(R0, I0, th0)
        + cp.multiply(gR, R - R0) + cp.multiply(gI, I - I0) + cp.multiply(gT, dT)
        + cR * cp.square(R - R0) + cI * cp.square(I - I0) + cT * cp.square(dT)
    )


def _rank_gap(A, anchor_A: NDArray[np.complex128]):
    """Tr(A) - u0^H A u0 with u0 the anchor's dominant eigenvector."""
    _, Q = np.linalg.eigh(0.5 * (anchor_A + anchor_A.conj().T))
    u0 = Q[:, -1]
    return cp.real(cp.trace(A)) - cp.real(u0.conj() @ A @ u0)


def stage2_build(
    ctx: PositioningContext,
    anchor: Stage2Iterate,
    coarse: NDArray[np.float64],
    amplitudes: Dict[str, NDArray[np.float64]],
    bounds: RobustnessBounds,
    rho: float,
) -> ConicProgram:
    """Convex stage-2 program: lifted phases, penalised phase consistency, x within the wavelength box."""
    scenario, settings = ctx.scenario, ctx.settings
    groups = _lifted_groups(ctx)
    K, L = len(ctx.users), ctx.n_links
    sigma2, sigma2_e = ctx.noise_user, ctx.noise_ea
    eye = np.eye(L)
    scale = ctx.scale.channel
    x_anchor = anchor.x.reshape(-1)

    prog = ConicProgram("stage2")
    x = prog.vector("x", L)
    _layout_constraints(
        prog, ctx, x, np.asarray(coarse, dtype=float).reshape(-1),
        settings.stage2_trust_wavelengths * scenario.wavelength, "stage2",
    )

    lifted = {}
    penalties, rank_gaps = [], []
    for group in groups:
        A = prog.hermitian(f"A[{group.key}]", group.size, psd=True)
        prog.add(cp.real(cp.diag(A)) == 1.0, tag=f"unit-diag:{group.key}")
        lifted[group.key] = A
        penalties.append(_phase_penalty(
            A, anchor.lifted[group.key], anchor.theta[group.key], anchor.slopes[group.key],
            group.link_index, x, x_anchor,
        ))
        rank_gaps.append(_rank_gap(A, anchor.lifted[group.key]))

    iota_n = prog.vector("iota_n", K)
    iota_d = prog.vector("iota_d", K, nonneg=True)
    for k, rec in enumerate(ctx.users):
        A = lifted[rec.key]
        b = amplitudes[rec.key]
        radius = bounds.user[k] * scale
        # With h = diag(a) b, diag(a)^H Y diag(a) = A^T o Y
        Yt = cp.multiply(A.T, ctx.signal(k))
        Zt = cp.multiply(A.T, ctx.interference(k))
        Ytb, Ztb = Yt @ b, Zt @ b
        signal, interference = cp.real(b @ Ytb), cp.real(b @ Ztb)
        if radius > 0:
            delta7 = prog.scalar(f"delta_c7_{k}", nonneg=True)
            delta8 = prog.scalar(f"delta_c8_{k}", nonneg=True)
            prog.add_psd(cp.bmat([
                [Yt + delta7 * eye, _col(Ytb, L)],
                [_row(cp.conj(Ytb), L), _cell(signal - delta7 * radius ** 2 - iota_n[k])],
            ]), tag=f"C7a:{k}")
            prog.add_psd(cp.bmat([
                [delta8 * eye - Zt, -_col(Ztb, L)],
                [-_row(cp.conj(Ztb), L), _cell(iota_d[k] - delta8 * radius ** 2 - interference)],
            ]), tag=f"C8a:{k}")
        else:
            prog.add(iota_n[k] <= signal, tag=f"C7a:{k}")
            prog.add(iota_d[k] >= interference, tag=f"C8a:{k}")

    for g in range(scenario.n_eavesdroppers):
        antennas = ctx.eavesdropper_antennas(g)
        T = len(antennas)
        n = T * L
        A = lifted[f"e{g}"]
        B = np.zeros((n, T))
        for t, rec in enumerate(antennas):
            B[t * L:(t + 1) * L, t] = amplitudes[rec.key]
        # Lifting to T*L rows turns the Frobenius ball of radius r into one of radius r / sqrt(T)
        radius = bounds.eavesdropper[g] * scale
        for k in range(K):
            M_bar = cp.multiply(A.T, np.kron(np.ones((T, T)), ctx.leakage_matrix(k)))
            corner = ctx.threshold * sigma2_e * np.eye(T) + B.T @ M_bar @ B
            if radius > 0:
                delta = prog.scalar(f"delta_c6_{k}_{g}", nonneg=True)
                off = B.T @ M_bar
                block = cp.bmat([
                    [corner - delta * np.eye(T), off],
                    [off.H, M_bar + (delta * T / radius ** 2) * np.eye(n)],
                ])
            else:
                block = corner
            prog.add_psd(block, tag=f"C6a:{k},{g}")

    for k in range(K):
        prog.add_log_term(1.0, iota_n[k] + iota_d[k] + sigma2, tag=f"obj:{k}")
        base = anchor.iota_d[k] + sigma2
        prog.add_objective(-math.log2(base) - (iota_d[k] - anchor.iota_d[k]) / (base * LN2))
    prog.add_penalty(sum(penalties), weight=rho)
    prog.add_penalty(sum(rank_gaps), weight=settings.rank_penalty)
    return prog


def _stage2_from_solution(
    ctx: PositioningContext, groups: List[LiftedPhases], solution: Solution, x: NDArray[np.float64]
) -> Stage2Iterate:
    theta, slopes = Stage2Iterate.phases_at(ctx, groups, x)
    lifted = {}
    for group in groups:
        A = np.asarray(solution.value(f"A[{group.key}]"), dtype=complex)
        lifted[group.key] = 0.5 * (A + A.conj().T)
    return Stage2Iterate(
        x=x.copy(), lifted=lifted, theta=theta, slopes=slopes,
        iota_d=np.maximum(np.asarray(solution.value("iota_d"), dtype=float), 0.0),
    )


def stage2_iterate(
    ctx: PositioningContext,
    coarse: NDArray[np.float64],
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> StageResult:
    """Penalty MM refinement around the coarse layout.

    The penalty weight starts at 1e-3 times the objective scale and grows tenfold
    per round until the largest phase residual falls below the configured
    tolerance. The returned layout is the best certified one seen, never worse
    than ``coarse``.
    """
    settings = ctx.settings
    max_iter = settings.stage2_max_iter if max_iter is None else max_iter
    tol = settings.mm_tol_bits if tol is None else tol
    scenario = ctx.scenario
    coarse = snap_layout(scenario, coarse)
    groups = _lifted_groups(ctx)
    bounds = robustness_bounds(scenario, coarse)
    amplitudes = {rec.key: link_response(ctx, rec, coarse)[0] for rec in ctx.receivers}
    anchor = Stage2Iterate.exact(ctx, groups, coarse, amplitudes, bounds)

    start_value = evaluate_layout(ctx, coarse)
    best_x, best_value = coarse.copy(), start_value
    trust = settings.stage2_trust_wavelengths * scenario.wavelength
    rho = 1e-3 * max(1.0, abs(start_value.objective))
    trace: List[StageTraceRow] = []
    layouts = [coarse.copy()]
    residual = anchor.gamma_residual()
    status = "max_iter"
    iteration = 0

    for round_index in range(settings.stage2_penalty_rounds):
        previous = -np.inf
        failed = False
        for _ in range(max_iter):
            start = time.perf_counter()
            solution = solve(stage2_build(ctx, anchor, coarse, amplitudes, bounds, rho), settings)
            elapsed = (time.perf_counter() - start) * 1e3
            if not solution.ok:
                logger.warning(f"Stage 2 iteration {iteration}: solver status {solution.status}")
                failed = True
                break
            x_new = np.clip(solution.value("x").reshape(coarse.shape), coarse - trust, coarse + trust)
            # coarse satisfies C1/C2, so snapping cannot leave the trust box
            x_new = snap_layout(scenario, x_new)
            anchor = _stage2_from_solution(ctx, groups, solution, x_new)
            residual = anchor.gamma_residual()
            value = evaluate_layout(ctx, x_new)
            accepted = value.certified(settings.certificate_tol) and value.objective > best_value.objective
            if accepted:
                best_x, best_value = x_new.copy(), value
                layouts.append(x_new.copy())
            trace.append(StageTraceRow(
                stage=2, iteration=iteration, objective=value.objective, surrogate=solution.objective,
                step_m=float(np.max(np.abs(x_new - coarse))), solve_ms=elapsed, accepted=accepted,
                gamma_residual=residual,
            ))
            iteration += 1
            if solution.objective - previous < tol:
                break
            previous = solution.objective
        if failed:
            status = "solver_failure"
            break
        logger.debug(f"Stage 2 round {round_index}: rho {rho:.3g}, phase residual {residual:.2e}")
        if residual < settings.gamma_residual_tol:
            status = "converged"
            break
        rho *= 10.0

    logger.info(
        f"Stage 2 finished ({status}): objective {best_value.objective:.4f} "
        f"(coarse {start_value.objective:.4f}), phase residual {residual:.2e}"
    )
    return StageResult(
        x=best_x, value=best_value, trace=trace, layouts=layouts, status=status,
        gamma_residual=residual, rho=rho,
    )


# ============ Positioning block ============

@dataclass
class PositioningResult:
    state: DesignState
    value: LayoutValue
    stage1: Optional[StageResult]
    stage2: Optional[StageResult]
    moved: bool
    positions: List[PositionTraceRow] = field(default_factory=list)


def _position_rows(stage: int, layouts: Sequence[NDArray[np.float64]], p: NDArray[np.float64]):
    rows = []
    for x in layouts:
        for n in range(x.shape[0]):
            for m in range(x.shape[1]):
                rows.append(PositionTraceRow(stage=stage, n=n, m=m, x_m=float(x[n, m]), p_nm=float(p[n, m])))
    return rows


def optimize_positions(
    scenario: Scenario, state: DesignState, settings: Optional[Settings] = None
) -> PositioningResult:
    """Stage 1 then stage 2 at fixed beams; falls back to refining the current layout.

    The returned layout is the best certified one among the current layout, the
    two-stage result and, if that does not improve, a stage-2 refinement of the
    current layout.
    """
    settings = settings or get_settings()
    ctx = PositioningContext.build(scenario, state, settings)
    start = evaluate_layout(ctx, state.x)
    stage1 = stage1_iterate(ctx, state.x)
    stage2 = stage2_iterate(ctx, stage1.x)
    positions = _position_rows(1, stage1.layouts, ctx.state.p)
    positions += _position_rows(2, stage2.layouts, ctx.state.p)

    options: List[Tuple[NDArray[np.float64], LayoutValue]] = [(state.x, start)]
    if stage2.value.certified(settings.certificate_tol):
        options.append((stage2.x, stage2.value))
    if stage2.value.objective <= start.objective and np.any(stage1.x != state.x):
        local = stage2_iterate(ctx, state.x)
        positions += _position_rows(2, local.layouts, ctx.state.p)
        if local.value.certified(settings.certificate_tol):
            options.append((local.x, local.value))
            if local.value.objective > stage2.value.objective:
                stage2 = local

    x_best, value = max(
        options, key=lambda item: (item[1].certified(settings.certificate_tol), item[1].objective)
    )
    moved = bool(np.any(x_best != state.x))
    logger.info(
        f"Positioning: robust sum rate {start.objective:.4f} -> {value.objective:.4f} bits/s/Hz"
        + ("" if moved else " (layout kept)")
    )
    return PositioningResult(
        state=state_at(ctx, x_best) if moved else state,
        value=value,
        stage1=stage1,
        stage2=stage2,
        moved=moved,
        positions=positions,
    )
