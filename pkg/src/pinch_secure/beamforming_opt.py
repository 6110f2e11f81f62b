"""Joint beamforming, artificial-noise and power-ratio design at fixed PA positions.

Every MM iteration solves one convex program in normalised units:

  * the robust sum-rate lower bound is written as
    sum_k log2(iota_N + iota_D + sigma^2) - log2(iota_D + sigma^2), the second
    log linearised at the anchor;
  * the worst-case signal and interference terms are S-procedure LMIs in the
    lifted effective covariances Y_k = P W_k P^H and Z = P V P^H;
  * leakage to every eavesdropper is a single LMI per (user, eavesdropper);
  * the bilinear links y = P w and z = P v use Schur blocks whose trace DC
    constraints, together with the rank-one DC constraints of the lifted
    matrices, enter the objective as penalties linearised at the anchor.

The penalised surrogate minorises the merit (objective minus exact penalty
gaps) and touches it at the anchor, so the merit never decreases.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import cvxpy as cp
import numpy as np
from numpy.typing import NDArray

from .channel import ChannelSet, build_channel_set
from .conic import ConicProgram, Solution, solve
from .config import Settings, get_settings
from .geometry import Scenario
from .rates import (
    DesignState,
    RobustnessBounds,
    leakage_certificate,
    max_quadratic_over_ball,
    min_quadratic_over_ball,
    robust_objective,
    robustness_bounds,
)
from .scaling import ProblemScale
from .waveguide_power import (
    attenuation_constant,
    budget_rhs,
    check_feasible,
    clamp_to_feasible,
    selection_vector,
    uniform_feasible_ratios,
)

logger = logging.getLogger(__name__)


class OptimizationError(Exception):
    """Optimizer started from an infeasible anchor or an unusable design."""
    pass


def _col(expr, n: int):
    return cp.reshape(expr, (n, 1), order="F")


def _row(expr, n: int):
    return cp.reshape(expr, (1, n), order="F")


def _cell(expr):
    return cp.reshape(expr, (1, 1), order="F")


def lift(X, x, n: int):
    """[[X, x], [x^H, 1]] as a cvxpy expression."""
    return cp.bmat([[X, _col(x, n)], [_row(cp.conj(x), n), np.ones((1, 1))]])


def lift_value(X: NDArray, x: NDArray) -> NDArray[np.complex128]:
    x = np.asarray(x, dtype=complex).reshape(-1, 1)
    return np.block([[X, x], [x.conj().T, np.ones((1, 1))]])


def _psd_part(X: NDArray) -> NDArray[np.complex128]:
    X = 0.5 * (X + X.conj().T)
    eigvals, Q = np.linalg.eigh(X)
    return (Q * np.maximum(eigvals, 0.0)) @ Q.conj().T


def extract_rank_one(M: NDArray[np.complex128]) -> Tuple[NDArray[np.complex128], float]:
    """Dominant rank-one factor sqrt(lambda_max) u_max and the ratio lambda_max / Tr(M).

    A ratio of 1 means M is rank one; 1/n for the identity flags a failed recovery.
    """
    M = 0.5 * (np.asarray(M, dtype=complex) + np.asarray(M, dtype=complex).conj().T)
    eigvals, Q = np.linalg.eigh(M)
    lam = max(float(eigvals[-1]), 0.0)
    trace = float(np.sum(np.maximum(eigvals, 0.0)))
    ratio = lam / trace if trace > 0 else 1.0
    return math.sqrt(lam) * Q[:, -1], ratio


def block_indicator(n_waveguides: int, pas: int) -> NDArray[np.float64]:
    """(M*N x N) 0/1 matrix placing PA l(n, m) under waveguide n."""
    B = np.zeros((n_waveguides * pas, n_waveguides))
    for n in range(n_waveguides):
        B[n * pas:(n + 1) * pas, n] = 1.0
    return B


@dataclass
class ScaledProblem:
    """Channels, radii and budgets of one fixed PA layout in normalised units."""
    h: NDArray[np.complex128]
    H: List[NDArray[np.complex128]]
    user_radius: NDArray[np.float64]
    ea_radius: NDArray[np.float64]
    noise_user: float
    noise_ea: float
    budgets: NDArray[np.float64]
    optimize_split: bool
    positions: NDArray[np.float64]
    alpha: float
    threshold: float
    scale: ProblemScale

    @classmethod
    def build(
        cls,
        scenario: Scenario,
        x: NDArray[np.float64],
        channels: ChannelSet,
        bounds: RobustnessBounds,
        scale: Optional[ProblemScale] = None,
    ) -> "ScaledProblem":
        scale = scale or ProblemScale.from_scenario(scenario)
        return cls(
            h=channels.user_matrix.T * scale.channel,
            H=[ea.H * scale.channel for ea in channels.eavesdroppers],
            user_radius=np.asarray(bounds.user) * scale.channel,
            ea_radius=np.asarray(bounds.eavesdropper) * scale.channel,
            noise_user=scale.noise_units(scenario.noise_user),
            noise_ea=scale.noise_units(scenario.noise_ea),
            budgets=scale.power_units(scenario.waveguide_budgets),
            optimize_split=scenario.optimize_split,
            positions=np.asarray(x, dtype=float),
            alpha=attenuation_constant(scenario),
            threshold=2.0 ** scenario.r_th - 1.0,
            scale=scale,
        )

    @property
    def n_users(self) -> int:
        return int(self.h.shape[0])

    @property
    def n_links(self) -> int:
        return int(self.h.shape[1])

    @property
    def n_waveguides(self) -> int:
        return int(self.positions.shape[0])

    @property
    def pas(self) -> int:
        return int(self.positions.shape[1])

    def power_matrix(self, a: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.diag(a) @ block_indicator(self.n_waveguides, self.pas)


@dataclass
class Subproblem1Iterate:
    """Lifted variables of one MM iterate, in normalised units.

    Y_k tracks P W_k P^H through y_k = P w_k (Schur block with U_k, s_k) and
    the lifted rank-one matrix [[Y_k, y_k], [y_k^H, 1]]; Z, z, U_bar, s_bar do
    the same for the artificial noise P V P^H with V = v v^H.
    """
    w: NDArray[np.complex128]
    W: NDArray[np.complex128]
    V: NDArray[np.complex128]
    v: NDArray[np.complex128]
    a: NDArray[np.float64]
    y: NDArray[np.complex128]
    Y: NDArray[np.complex128]
    U: NDArray[np.complex128]
    s: NDArray[np.float64]
    z: NDArray[np.complex128]
    Z: NDArray[np.complex128]
    U_bar: NDArray[np.complex128]
    s_bar: float
    iota_n: NDArray[np.float64]
    iota_d: NDArray[np.float64]
    budgets: NDArray[np.float64]
    delta_c7: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    delta_c8: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    delta_e: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 0)))

    @classmethod
    def from_state(cls, problem: ScaledProblem, state: DesignState) -> "Subproblem1Iterate":
        """Exact lifting of a physical design."""
        scale = problem.scale
        K = problem.n_users
        w = state.w / math.sqrt(scale.power)
        V = state.V / scale.power
        v, _ = extract_rank_one(V)
        a = np.sqrt(np.maximum(state.p, 0.0)).reshape(-1)
        P = problem.power_matrix(a)
        y = w @ P.T
        Y = np.array([np.outer(y[k], y[k].conj()) for k in range(K)])
        Z = P @ V @ P.T
        iterate = cls(
            w=w,
            W=np.array([np.outer(w[k], w[k].conj()) for k in range(K)]),
            V=V,
            v=v,
            a=a,
            y=y,
            Y=Y,
            U=np.array([P @ P.T for _ in range(K)], dtype=complex),
            s=np.real(np.sum(np.abs(w) ** 2, axis=1)),
            z=P @ v,
            Z=Z,
            U_bar=(P @ P.T).astype(complex),
            s_bar=float(np.linalg.norm(v) ** 2),
            iota_n=np.zeros(K),
            iota_d=np.zeros(K),
            budgets=state.budgets / scale.power,
        )
        for k in range(K):
            others = Z + Y.sum(axis=0) - Y[k]
            iterate.iota_n[k] = max(
                min_quadratic_over_ball(Y[k], problem.h[k], problem.user_radius[k]), 0.0
            )
            iterate.iota_d[k] = max(
                max_quadratic_over_ball(others, problem.h[k], problem.user_radius[k]), 0.0
            )
        return iterate

    def lifted(self) -> Dict[str, NDArray[np.complex128]]:
        blocks = {"V": lift_value(self.V, self.v), "Z": lift_value(self.Z, self.z)}
        for k in range(self.w.shape[0]):
            blocks[f"W{k}"] = lift_value(self.W[k], self.w[k])
            blocks[f"Y{k}"] = lift_value(self.Y[k], self.y[k])
        return blocks

    def rank_one_ratio(self) -> float:
        return min(extract_rank_one(X)[1] for X in self.lifted().values())

    def rank_gap(self) -> float:
        """Sum of Tr(X) - lambda_max(X) over the lifted matrices."""
        gap = 0.0
        for X in self.lifted().values():
            eigvals = np.linalg.eigvalsh(0.5 * (X + X.conj().T))
            gap += float(np.sum(eigvals) - eigvals[-1])
        return max(gap, 0.0)

    def schur_gap(self) -> float:
        """Sum of Tr(U) - ||P||_F^2 over the Schur link blocks."""
        power = float(self.a @ self.a)
        gaps = [float(np.real(np.trace(U))) - power for U in self.U]
        gaps.append(float(np.real(np.trace(self.U_bar))) - power)
        return max(float(sum(gaps)), 0.0)

    def to_state(self, problem: ScaledProblem, x: NDArray[np.float64]) -> DesignState:
        """Physical design: beams w_k, AN covariance V, ratios a^2 clamped to C3, budgets."""
        scale = problem.scale
        p = clamp_to_feasible((self.a ** 2).reshape(problem.n_waveguides, problem.pas), x, problem.alpha)
        state = DesignState(
            w=self.w * math.sqrt(scale.power),
            V=_psd_part(self.V) * scale.power,
            p=p,
            x=np.asarray(x, dtype=float).copy(),
            budgets=np.maximum(self.budgets, 0.0) * scale.power,
        )
        return enforce_budgets(state)


def enforce_budgets(state: DesignState) -> DesignState:
    """Scale each waveguide's beams and AN so that C4 holds exactly."""
    used = state.waveguide_power()
    factors = np.ones_like(used)
    over = used > state.budgets
    factors[over] = np.sqrt(state.budgets[over] / used[over])
    if not np.any(over):
        return state
    D = np.diag(factors)
    return state.copy(w=state.w * factors[None, :], V=D @ state.V @ D)


def merit(iterate: Subproblem1Iterate, problem: ScaledProblem, settings: Settings) -> float:
    """DC objective in bits minus the exact rank-one and Schur-link penalty gaps."""
    sigma2 = problem.noise_user
    bits = float(np.sum(
        np.log2(iterate.iota_n + iterate.iota_d + sigma2) - np.log2(iterate.iota_d + sigma2)
    ))
    return bits - settings.rank_penalty * iterate.rank_gap() - settings.dc_penalty * iterate.schur_gap()


def _check_anchor(problem: ScaledProblem, anchor: Subproblem1Iterate, tol: float = 1e-7):
    p = (anchor.a ** 2).reshape(problem.n_waveguides, problem.pas)
    report = check_feasible(p, problem.positions, problem.alpha, slack=tol)
    if not report.feasible:
        raise OptimizationError(
            f"Anchor violates the extractable-power constraint at PA {report.worst_index} "
            f"by {report.worst_violation:.3e}"
        )
    used = np.real(np.einsum("knn->n", anchor.W)) + np.real(np.diag(anchor.V))
    if np.any(used > anchor.budgets * (1 + tol) + tol):
        raise OptimizationError("Anchor violates the per-waveguide power budget")


def build_subproblem1(
    problem: ScaledProblem, anchor: Subproblem1Iterate, settings: Optional[Settings] = None
) -> ConicProgram:
    """Convex restriction of the joint design around ``anchor``.

    Raises:
        OptimizationError: If the anchor violates C3 or C4
    """
    settings = settings or get_settings()
    _check_anchor(problem, anchor)
    K, L = problem.n_users, problem.n_links
    N, M = problem.n_waveguides, problem.pas
    G = len(problem.H)
    sigma2, sigma2_e = problem.noise_user, problem.noise_ea
    eye_l = np.eye(L)

    prog = ConicProgram("subproblem1")
    a = prog.vector("a", L, nonneg=True)
    P = cp.diag(a) @ block_indicator(N, M)

    if problem.optimize_split:
        budgets = prog.vector("budgets", N, nonneg=True)
        prog.add(cp.sum(budgets) <= 1.0, tag="C5")
    else:
        budgets = anchor.budgets

    # C3 in amplitudes: s @ a^2 <= exp(-2 alpha x_m)
    for n in range(N):
        block = a[n * M:(n + 1) * M]
        for m in range(M):
            s = selection_vector(m, problem.positions[n], problem.alpha)
            prog.add(
                cp.sum(cp.multiply(s, cp.square(block))) <= budget_rhs(m, problem.positions[n], problem.alpha),
                tag=f"C3:{n},{m}",
            )

    # Artificial noise: V = v v^H, z = P v, Z = z z^H
    V = prog.hermitian("V", N)
    v = prog.vector("v", N, complex=True)
    Z = prog.hermitian("Z", L)
    z = prog.vector("z", L, complex=True)
    U_bar = prog.hermitian("U_bar", L, psd=True)
    s_bar = prog.scalar("s_bar", nonneg=True)
    V_lift, Z_lift = lift(V, v, N), lift(Z, z, L)
    prog.add_psd(V_lift, tag="C13a")
    prog.add_psd(Z_lift, tag="C12d")
    prog.add_psd(cp.bmat([
        [U_bar, _col(z, L), P],
        [_row(cp.conj(z), L), _cell(s_bar), _row(cp.conj(v), N)],
        [P.T, _col(v, N), np.eye(N)],
    ]), tag="C12a")
    prog.add(cp.real(cp.trace(Z)) <= cp.real(cp.trace(V)), tag="trace-cut")

    W, w, Y, y, U, s = [], [], [], [], [], []
    lifted = {"V": V_lift, "Z": Z_lift}
    for k in range(K):
        W.append(prog.hermitian(f"W{k}", N))
        w.append(prog.vector(f"w{k}", N, complex=True))
        Y.append(prog.hermitian(f"Y{k}", L))
        y.append(prog.vector(f"y{k}", L, complex=True))
        U.append(prog.hermitian(f"U{k}", L, psd=True))
        s.append(prog.scalar(f"s{k}", nonneg=True))
        lifted[f"W{k}"] = lift(W[k], w[k], N)
        lifted[f"Y{k}"] = lift(Y[k], y[k], L)
        prog.add_psd(lifted[f"W{k}"], tag=f"C10a:{k}")
        prog.add_psd(lifted[f"Y{k}"], tag=f"C11d:{k}")
        prog.add_psd(cp.bmat([
            [U[k], _col(y[k], L), P],
            [_row(cp.conj(y[k]), L), _cell(s[k]), _row(cp.conj(w[k]), N)],
            [P.T, _col(w[k], N), np.eye(N)],
        ]), tag=f"C11a:{k}")
        prog.add(cp.real(cp.trace(Y[k])) <= cp.real(cp.trace(W[k])), tag="trace-cut")

    # C4: per-waveguide power of the lifted beams and AN
    for n in range(N):
        prog.add(
            sum(cp.real(W[k][n, n]) for k in range(K)) + cp.real(V[n, n]) <= budgets[n],
            tag=f"C4:{n}",
        )

    iota_n = prog.vector("iota_n", K, nonneg=True)
    iota_d = prog.vector("iota_d", K, nonneg=True)
    delta_c7 = prog.vector("delta_c7", K, nonneg=True)
    delta_c8 = prog.vector("delta_c8", K, nonneg=True)

    for k in range(K):
        h, radius = problem.h[k], problem.user_radius[k]
        Yh = Y[k] @ h
        signal = cp.real(h.conj() @ Yh)
        Z_bar = Z + sum(Y[j] for j in range(K) if j != k)
        Zh = Z_bar @ h
        interference = cp.real(h.conj() @ Zh)
        if radius > 0:
            r2 = radius ** 2
            prog.add_psd(cp.bmat([
                [Y[k] + delta_c7[k] * eye_l, _col(Yh, L)],
                [_row(cp.conj(Yh), L), _cell(signal - delta_c7[k] * r2 - iota_n[k])],
            ]), tag=f"C7a:{k}")
            prog.add_psd(cp.bmat([
                [delta_c8[k] * eye_l - Z_bar, -_col(Zh, L)],
                [-_row(cp.conj(Zh), L), _cell(iota_d[k] - delta_c8[k] * r2 - interference)],
            ]), tag=f"C8a:{k}")
        else:
            prog.add(iota_n[k] <= signal, tag=f"C7a:{k}")
            prog.add(iota_d[k] >= interference, tag=f"C8a:{k}")

    if G:
        delta_e = prog.vector("delta_e", K * G, nonneg=True)
        for g, H in enumerate(problem.H):
            T = H.shape[1]
            radius = problem.ea_radius[g]
            for k in range(K):
                Mk = problem.threshold * Z - Y[k]
                corner = problem.threshold * sigma2_e * np.eye(T) + H.conj().T @ Mk @ H
                if radius > 0:
                    d = delta_e[k * G + g]
                    prog.add_psd(cp.bmat([
                        [corner - d * np.eye(T), H.conj().T @ Mk],
                        [Mk @ H, Mk + (d / radius ** 2) * eye_l],
                    ]), tag=f"C6a:{k},{g}")
                else:
                    prog.add_psd(corner, tag=f"C6a:{k},{g}")

    # Objective: log2(iota_N + iota_D + sigma^2) minus the tangent of log2(iota_D + sigma^2)
    for k in range(K):
        prog.add_log_term(1.0, iota_n[k] + iota_d[k] + sigma2, tag=f"obj:{k}")
        base = anchor.iota_d[k] + sigma2
        prog.add_objective(
            -math.log2(base) - (iota_d[k] - anchor.iota_d[k]) / (base * math.log(2.0))
        )

    # Rank-one DC penalties Tr(X) - u0^H X u0 with u0 the anchor's dominant eigenvector
    anchor_blocks = anchor.lifted()
    for name, X in lifted.items():
        _, Q = np.linalg.eigh(0.5 * (anchor_blocks[name] + anchor_blocks[name].conj().T))
        u0 = Q[:, -1]
        prog.add_penalty(
            cp.real(cp.trace(X)) - cp.real(u0.conj() @ X @ u0), weight=settings.rank_penalty
        )

    # Schur-link DC penalties Tr(U) - (2 <a0, a> - ||a0||^2)
    a0 = anchor.a
    tangent = 2 * a0 @ a - float(a0 @ a0)
    schur = sum(cp.real(cp.trace(U[k])) - tangent for k in range(K))
    schur = schur + cp.real(cp.trace(U_bar)) - tangent
    prog.add_penalty(schur, weight=settings.dc_penalty)
    return prog


def _iterate_from_solution(
    solution: Solution, problem: ScaledProblem, anchor: Subproblem1Iterate
) -> Subproblem1Iterate:
    K, G = problem.n_users, len(problem.H)
    value = solution.value

    def herm(name):
        X = np.asarray(value(name), dtype=complex)
        return 0.5 * (X + X.conj().T)

    return Subproblem1Iterate(
        w=np.array([np.asarray(value(f"w{k}"), dtype=complex) for k in range(K)]),
        W=np.array([herm(f"W{k}") for k in range(K)]),
        V=herm("V"),
        v=np.asarray(value("v"), dtype=complex),
        a=np.maximum(np.asarray(value("a"), dtype=float), 0.0),
        y=np.array([np.asarray(value(f"y{k}"), dtype=complex) for k in range(K)]),
        Y=np.array([herm(f"Y{k}") for k in range(K)]),
        U=np.array([herm(f"U{k}") for k in range(K)]),
        s=np.array([solution.scalar(f"s{k}") for k in range(K)]),
        z=np.asarray(value("z"), dtype=complex),
        Z=herm("Z"),
        U_bar=herm("U_bar"),
        s_bar=solution.scalar("s_bar"),
        iota_n=np.maximum(np.asarray(value("iota_n"), dtype=float), 0.0),
        iota_d=np.maximum(np.asarray(value("iota_d"), dtype=float), 0.0),
        budgets=(
            np.asarray(value("budgets"), dtype=float) if problem.optimize_split else anchor.budgets
        ),
        delta_c7=np.asarray(value("delta_c7"), dtype=float),
        delta_c8=np.asarray(value("delta_c8"), dtype=float),
        delta_e=(
            np.asarray(value("delta_e"), dtype=float).reshape(K, G) if G else np.zeros((K, 0))
        ),
    )


@dataclass
class MMTraceRow:
    iteration: int
    objective_bits: float
    solve_ms: float
    rank1_min_ratio: float
    leak_margin: float


@dataclass
class Subproblem1Result:
    state: DesignState
    iterate: Subproblem1Iterate
    trace: List[MMTraceRow]
    objective: float
    leak_margin: float
    status: str = "converged"
    randomized: bool = False


def initialize_state(
    scenario: Scenario,
    x: NDArray[np.float64],
    channels: Optional[ChannelSet] = None,
    bounds: Optional[RobustnessBounds] = None,
    settings: Optional[Settings] = None,
) -> DesignState:
    """Feasible starting design for the first MM anchor.

    Maximum-ratio beams on the nominal channels scaled to the per-waveguide
    budgets, AN covariance at a small fraction of each budget, uniform
    feasible power ratios; beams are then backed off until the leakage LMI
    certifies every (user, eavesdropper) pair.
    """
    settings = settings or get_settings()
    channels = channels or build_channel_set(scenario, x)
    bounds = bounds or robustness_bounds(scenario, x, channels)
    alpha = attenuation_constant(scenario)
    p = uniform_feasible_ratios(x, alpha)
    budgets = scenario.waveguide_budgets.copy()
    V = np.diag(settings.an_init_fraction * budgets).astype(complex)

    P = DesignState(
        w=np.zeros((scenario.n_users, scenario.n_waveguides), dtype=complex),
        V=V, p=p, x=np.asarray(x, dtype=float), budgets=budgets,
    ).P
    w = np.zeros((scenario.n_users, scenario.n_waveguides), dtype=complex)
    for k, user in enumerate(channels.users):
        g = P.T @ user.h
        if np.linalg.norm(g) > 0:
            w[k] = g / np.linalg.norm(g)
    per_guide = np.sum(np.abs(w) ** 2, axis=0)
    room = budgets - np.real(np.diag(V))
    with np.errstate(divide="ignore"):
        limits = np.where(per_guide > 0, room / per_guide, np.inf)
    full = math.sqrt(float(np.min(limits))) if np.isfinite(np.min(limits)) else 0.0
    state = DesignState(w=w * full, V=V, p=p, x=np.asarray(x, dtype=float), budgets=budgets)
    return back_off_beams(scenario, state, channels, bounds)


def back_off_beams(
    scenario: Scenario,
    state: DesignState,
    channels: Optional[ChannelSet] = None,
    bounds: Optional[RobustnessBounds] = None,
) -> DesignState:
    """Scale the information beams down until the leakage LMI certifies every pair."""
    channels = channels or build_channel_set(scenario, state.x)
    bounds = bounds or robustness_bounds(scenario, state.x, channels)
    if scenario.n_eavesdroppers == 0 or leakage_certificate(scenario, state, channels, bounds) >= 0:
        return state
    low, high = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (low + high)
        trial = state.copy(w=state.w * mid)
        if leakage_certificate(scenario, trial, channels, bounds) >= 0:
            low = mid
        else:
            high = mid
    logger.debug(f"Beams backed off to {low:.4f} of full power for leakage")
    return state.copy(w=state.w * low)


def gaussian_randomization(
    scenario: Scenario,
    problem: ScaledProblem,
    iterate: Subproblem1Iterate,
    channels: ChannelSet,
    bounds: RobustnessBounds,
    rng: np.random.Generator,
    candidates: int,
    settings: Settings,
) -> Optional[Tuple[DesignState, float]]:
    """Best leakage-certified design among beams drawn from CN(0, W_k)."""
    base = iterate.to_state(problem, problem.positions)
    roots = []
    for Wk in iterate.W:
        eigvals, Q = np.linalg.eigh(0.5 * (Wk + Wk.conj().T))
        roots.append(Q * np.sqrt(np.maximum(eigvals, 0.0)))
    best: Optional[Tuple[DesignState, float]] = None
    root_power = math.sqrt(problem.scale.power)
    N = problem.n_waveguides
    for _ in range(candidates):
        xi = (rng.standard_normal((len(roots), N)) + 1j * rng.standard_normal((len(roots), N))) / math.sqrt(2)
        w = np.array([R @ xi[k] for k, R in enumerate(roots)]) * root_power
        candidate = enforce_budgets(base.copy(w=w))
        if leakage_certificate(scenario, candidate, channels, bounds, problem.scale) < -settings.certificate_tol:
            continue
        value = robust_objective(scenario, candidate, channels, bounds)
        if best is None or value > best[1]:
            best = (candidate, value)
    return best


def iterate_subproblem1(
    scenario: Scenario,
    state: DesignState,
    channels: Optional[ChannelSet] = None,
    bounds: Optional[RobustnessBounds] = None,
    settings: Optional[Settings] = None,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> Subproblem1Result:
    """MM loop over ``build_subproblem1`` at the positions of ``state``.

    The merit sequence is nondecreasing; a solver failure or a merit drop beyond
    the solver slack stops the loop at the last accepted iterate. The returned
    design is the best certified one among the MM output, its Gaussian
    randomizations and the starting design.
    """
    settings = settings or get_settings()
    max_iter = settings.mm_max_iter if max_iter is None else max_iter
    tol = settings.mm_tol_bits if tol is None else tol
    rng = rng or np.random.default_rng(0)
    x = state.x
    channels = channels or build_channel_set(scenario, x)
    bounds = bounds or robustness_bounds(scenario, x, channels)
    problem = ScaledProblem.build(scenario, x, channels, bounds)

    anchor = Subproblem1Iterate.from_state(problem, state)
    _check_anchor(problem, anchor)
    start_certified = (
        leakage_certificate(scenario, state, channels, bounds, problem.scale) >= -settings.certificate_tol
    )
    # An uncertified start is not feasible for the surrogate, so its merit is no reference
    current = merit(anchor, problem, settings) if start_certified else -np.inf
    trace: List[MMTraceRow] = []
    status = "max_iter"
    for i in range(max_iter):
        start = time.perf_counter()
        solution = solve(build_subproblem1(problem, anchor, settings), settings)
        elapsed = (time.perf_counter() - start) * 1e3
        if not solution.ok:
            logger.warning(f"Subproblem 1 iteration {i}: solver status {solution.status}, keeping last iterate")
            status = "solver_failure"
            break
        candidate = _iterate_from_solution(solution, problem, anchor)
        value = merit(candidate, problem, settings)
        if value < current - settings.monotone_slack * max(1.0, abs(current)):
            logger.warning(f"Subproblem 1 iteration {i}: merit dropped {current - value:.3e}, stopping")
            status = "stalled"
            break
        gain = value - current if np.isfinite(current) else np.inf
        anchor, current = candidate, max(value, current)
        trace.append(MMTraceRow(
            iteration=i,
            objective_bits=current,
            solve_ms=elapsed,
            rank1_min_ratio=candidate.rank_one_ratio(),
            leak_margin=leakage_certificate(
                scenario, candidate.to_state(problem, x), channels, bounds, problem.scale
            ),
        ))
        logger.debug(
            f"Subproblem 1 iteration {i}: merit {current:.6f} bits, "
            f"rank-one ratio {trace[-1].rank1_min_ratio:.5f}"
        )
        if gain < tol:
            status = "converged"
            break

    options: List[Tuple[DesignState, float, bool]] = []
    extracted = anchor.to_state(problem, x)
    if leakage_certificate(scenario, extracted, channels, bounds, problem.scale) >= -settings.certificate_tol:
        options.append((extracted, robust_objective(scenario, extracted, channels, bounds), False))
    if anchor.rank_one_ratio() < settings.rank_one_target:
        logger.warning(
            f"Rank-one ratio {anchor.rank_one_ratio():.4f} below {settings.rank_one_target}, "
            f"running Gaussian randomization"
        )
        randomized = gaussian_randomization(
            scenario, problem, anchor, channels, bounds, rng, settings.randomization_candidates, settings
        )
        if randomized is not None:
            options.append((randomized[0], randomized[1], True))
    if start_certified:
        options.append((state, robust_objective(scenario, state, channels, bounds), False))
    if not options:
        raise OptimizationError("No leakage-certified design found at these PA positions")

    best_state, best_value, randomized_flag = max(options, key=lambda item: item[1])
    logger.info(
        f"Subproblem 1 finished ({status}) after {len(trace)} iterations: "
        f"robust sum rate {best_value:.4f} bits/s/Hz"
    )
    return Subproblem1Result(
        state=best_state,
        iterate=anchor,
        trace=trace,
        objective=best_value,
        leak_margin=leakage_certificate(scenario, best_state, channels, bounds, problem.scale),
        status=status,
        randomized=randomized_flag,
    )
