"""Rates, trust-region worst cases and leakage certification."""

import math

import numpy as np
import pytest

from pinch_secure.channel import build_channel_set
from pinch_secure.rates import (
    DesignState,
    RateError,
    RateReport,
    budgets_ok,
    ea_rate,
    ea_rate_quadratic,
    leakage_certificate,
    leakage_lmi_margin,
    max_quadratic_over_ball,
    min_quadratic_over_ball,
    rate_report,
    robust_objective,
    robustness_bounds,
    solve_trust_region,
    user_rate,
    worst_case_leakage,
    worst_case_user_bound,
)
from pinch_secure.scaling import ProblemScale


def make_state(scenario, layout, beam_power=0.01, an_power=0.005):
    N, M = layout.shape
    return DesignState(
        w=np.full((scenario.n_users, N), math.sqrt(beam_power), dtype=complex),
        V=an_power * np.eye(N, dtype=complex),
        p=np.full((N, M), 0.4),
        x=layout.copy(),
        budgets=scenario.waveguide_budgets.copy(),
    )


def random_hermitian(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (A + A.conj().T)


def ball_samples(rng, n, radius, count):
    d = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * radius * rng.uniform(size=(count, 1)) ** (1.0 / (2 * n))


class TestTrustRegion:
    @pytest.mark.parametrize("radius", [0.1, 0.7, 2.0])
    def test_global_minimum(self, rng, radius):
        A = random_hermitian(rng, 4)
        h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        result = solve_trust_region(A, h, radius)
        assert np.linalg.norm(result.delta) <= radius * (1 + 1e-9)
        samples = ball_samples(rng, 4, radius, 3000)
        values = np.real(np.einsum("si,ij,sj->s", (h + samples).conj(), A, h + samples))
        assert result.value <= values.min() + 1e-9
        assert np.linalg.norm(result.delta) <= radius + 1e-12
        assert result.kkt_residual <= 1e-10

    def test_psd_ball_covering_origin(self, rng):
        B = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        A = B @ B.conj().T
        h = np.array([0.1, 0.0, 0.1j])
        assert min_quadratic_over_ball(A, h, 1.0) == pytest.approx(0.0, abs=1e-10)

    def test_zero_radius(self, rng):
        A = random_hermitian(rng, 3)
        h = rng.standard_normal(3) + 0j
        expected = float(np.real(h.conj() @ A @ h))
        assert min_quadratic_over_ball(A, h, 0.0) == pytest.approx(expected)

    def test_maximum_dominates_samples(self, rng):
        A = random_hermitian(rng, 3)
        h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        samples = ball_samples(rng, 3, 0.5, 2000)
        values = np.real(np.einsum("si,ij,sj->s", (h + samples).conj(), A, h + samples))
        assert max_quadratic_over_ball(A, h, 0.5) >= values.max() - 1e-9

    def test_hard_case(self):
        A = np.diag([-1.0, 2.0]).astype(complex)
        h = np.array([0.0, 0.0], dtype=complex)
        result = solve_trust_region(A, h, 1.0)
        assert result.value == pytest.approx(-1.0)


class TestRates:
    def test_user_rate_above_worst_case(self, scenario, layout):
        state = make_state(scenario, layout)
        h = build_channel_set(scenario, layout).users[0].h
        radius = scenario.kappa * np.linalg.norm(h)
        nominal = user_rate(h, state, 0, scenario.noise_user)
        assert worst_case_user_bound(h, radius, state, 0, scenario.noise_user) <= nominal
        assert worst_case_user_bound(h, 0.0, state, 0, scenario.noise_user) == pytest.approx(nominal)

    def test_user_rate_needs_noise(self, scenario, layout):
        state = make_state(scenario, layout)
        h = build_channel_set(scenario, layout).users[0].h
        with pytest.raises(RateError):
            user_rate(h, state, 0, 0.0)

    def test_ea_rate_rank_one_identity(self, scenario, layout):
        state = make_state(scenario, layout)
        H = build_channel_set(scenario, layout).eavesdroppers[0].H
        assert ea_rate(H, state, 0, scenario.noise_ea) == pytest.approx(
            ea_rate_quadratic(H, state, 0, scenario.noise_ea), rel=1e-9
        )

    @pytest.mark.parametrize("phase", [0.3, math.pi / 2, 2.5])
    def test_ea_rate_ignores_beam_phase(self, scenario, layout, phase):
        state = make_state(scenario, layout)
        H = build_channel_set(scenario, layout).eavesdroppers[0].H
        rotated = state.copy(w=state.w * np.exp(1j * phase))
        assert ea_rate(H, rotated, 0, scenario.noise_ea) == pytest.approx(
            ea_rate(H, state, 0, scenario.noise_ea), rel=1e-12
        )

    def test_ea_rate_singular_covariance(self, scenario, layout):
        state = make_state(scenario, layout, an_power=0.0)
        H = build_channel_set(scenario, layout).eavesdroppers[0].H
        with pytest.raises(RateError):
            ea_rate(H, state, 0, 0.0)

    def test_artificial_noise_reduces_leakage(self, scenario, layout):
        H = build_channel_set(scenario, layout).eavesdroppers[0].H
        quiet = ea_rate(H, make_state(scenario, layout, an_power=0.0), 0, scenario.noise_ea)
        noisy = ea_rate(H, make_state(scenario, layout, an_power=0.01), 0, scenario.noise_ea)
        assert noisy < quiet

    def test_budgets(self, scenario, layout):
        state = make_state(scenario, layout)
        assert budgets_ok(state, scenario.p_max)
        assert not budgets_ok(make_state(scenario, layout, beam_power=0.06), scenario.p_max)

    def test_report_properties(self):
        report = RateReport(nominal=[2.0, 3.0], worst_case=[1.5, 2.5],
                            leakage=np.array([[0.2, 0.7]]), leak_threshold=1.0)
        assert report.sum_rate == pytest.approx(4.0)
        assert report.leak_max == pytest.approx(0.7)
        assert report.leak_margin == pytest.approx(0.3)
        assert RateReport(nominal=[], worst_case=[]).leak_max == 0.0


class TestLeakage:
    def test_margin_at_zero_radius_is_min_eigenvalue(self, scenario, layout):
        state = make_state(scenario, layout)
        H = build_channel_set(scenario, layout).eavesdroppers[0].H
        scale = ProblemScale.from_scenario(scenario)
        beam = state.effective_beams()[:, 0]
        noise_cov = state.effective_noise()
        margin = leakage_lmi_margin(H, beam, noise_cov, 0.0, scenario.r_th, scenario.noise_ea, scale)

        Hs = H * scale.channel
        b = beam / math.sqrt(scale.power)
        Z = noise_cov / scale.power
        threshold = 2.0 ** scenario.r_th - 1.0
        corner = Hs.conj().T @ (threshold * Z - np.outer(b, b.conj())) @ Hs
        corner += threshold * scale.noise_units(scenario.noise_ea) * np.eye(2)
        assert margin == pytest.approx(np.linalg.eigvalsh(corner)[0], rel=1e-9)

    def test_margin_shrinks_with_radius(self, scenario, layout):
        state = make_state(scenario, layout, beam_power=1e-6, an_power=0.02)
        H = build_channel_set(scenario, layout).eavesdroppers[0].H
        scale = ProblemScale.from_scenario(scenario)
        args = (state.effective_beams()[:, 0], state.effective_noise())
        at_zero = leakage_lmi_margin(H, *args, 0.0, scenario.r_th, scenario.noise_ea, scale)
        wide = leakage_lmi_margin(H, *args, 1e-5, scenario.r_th, scenario.noise_ea, scale)
        assert wide <= at_zero + 1e-9

    def test_search_dominates_nominal(self, scenario, layout, settings):
        state = make_state(scenario, layout)
        report = worst_case_leakage(state, scenario, 0, 0, "both", settings=settings)
        assert report.structured >= report.nominal - 1e-12
        assert report.ball >= report.structured - 1e-9
        assert report.worst == max(report.nominal, report.structured)
        assert report.radius > 0
        assert report.evaluations > 0

    def test_structured_only_leaves_ball_unset(self, scenario, layout, settings):
        report = worst_case_leakage(make_state(scenario, layout), scenario, 0, 0, "structured",
                                    settings=settings)
        assert math.isnan(report.ball)

    def test_unknown_strategy(self, scenario, layout):
        with pytest.raises(ValueError):
            worst_case_leakage(make_state(scenario, layout), scenario, 0, 0, "exhaustive")


class TestRobust:
    def test_objective_and_report(self, scenario, layout):
        state = make_state(scenario, layout)
        channels = build_channel_set(scenario, layout)
        bounds = robustness_bounds(scenario, layout, channels)
        assert bounds.user.shape == (1,) and bounds.eavesdropper.shape == (1,)
        report = rate_report(scenario, state, channels, bounds)
        assert robust_objective(scenario, state, channels, bounds) == pytest.approx(report.sum_rate)
        assert report.worst_case[0] <= report.nominal[0]

    def test_certificate_without_eavesdroppers(self, scenario, layout):
        scene = scenario.without_eavesdroppers()
        state = make_state(scene, layout)
        channels = build_channel_set(scene, layout)
        bounds = robustness_bounds(scene, layout, channels)
        assert math.isinf(leakage_certificate(scene, state, channels, bounds))

    def test_certificate_is_minimum_over_pairs(self, scenario, layout):
        state = make_state(scenario, layout)
        channels = build_channel_set(scenario, layout)
        bounds = robustness_bounds(scenario, layout, channels)
        scale = ProblemScale.from_scenario(scenario)
        expected = leakage_lmi_margin(
            channels.eavesdroppers[0].H, state.effective_beams()[:, 0], state.effective_noise(),
            bounds.eavesdropper[0], scenario.r_th, scenario.noise_ea, scale,
        )
        assert leakage_certificate(scenario, state, channels, bounds) == pytest.approx(expected)
