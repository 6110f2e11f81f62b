"""Clearance models, phase penalties and the two positioning stages."""

import numpy as np
import pytest

from pinch_secure.beamforming_opt import OptimizationError, initialize_state
from pinch_secure.geometry import min_clearance_points
from pinch_secure.positioning_opt import (
    PHASE_CURVATURE,
    LinkPlanes,
    PositioningContext,
    Stage1Iterate,
    Stage2Iterate,
    _lifted_groups,
    build_receivers,
    evaluate_layout,
    link_response,
    optimize_positions,
    phase_majorant,
    phase_residual,
    snap_layout,
    stage1_build,
    stage1_iterate,
    stage2_iterate,
)
from pinch_secure.rates import robustness_bounds

from .conftest import SHADOW_BOX, make_scenario


@pytest.fixture
def shadowed_scenario():
    """A box between the user and the first stretch of both waveguides."""
    return make_scenario(blockages=[SHADOW_BOX], users=[{"x": 10.0, "y": 5.0}])


@pytest.fixture
def context(blocked_scenario, layout, settings):
    state = initialize_state(blocked_scenario, layout, settings=settings)
    return PositioningContext.build(blocked_scenario, state, settings)


def _spacing_ok(scenario, x):
    gaps = np.diff(x, axis=1)
    return (
        np.all(x >= -1e-9)
        and np.all(x <= scenario.waveguide_length + 1e-9)
        and np.all(gaps >= scenario.spacing - 1e-9)
    )


class TestLinkPlanes:
    def test_models_sandwich_clearance(self, shadowed_scenario, rng):
        receiver = build_receivers(shadowed_scenario)[0]
        for planes in receiver.planes:
            for _ in range(20):
                x0 = rng.uniform(0.0, 15.0)
                xs = rng.uniform(0.0, 15.0, 50)
                exact = planes.clearance(xs)
                assert np.all(planes.lower_bound(xs, x0) <= exact + 1e-12)
                assert np.all(planes.upper_bound(xs, x0) >= exact - 1e-12)
                assert planes.lower_bound(x0, x0) == pytest.approx(planes.clearance(x0))
                assert planes.upper_bound(x0, x0) == pytest.approx(planes.clearance(x0))

    def test_clearance_matches_geometry(self, shadowed_scenario):
        receiver = build_receivers(shadowed_scenario)[0]
        xs = np.linspace(0.0, 15.0, 61)
        for waveguide, planes in zip(shadowed_scenario.waveguides, receiver.planes):
            expected = min_clearance_points(waveguide.pa_points(xs), receiver.regions)
            np.testing.assert_allclose(planes.clearance(xs), expected, atol=1e-12)

    def test_shadowed_stretch_is_negative(self, shadowed_scenario):
        planes = build_receivers(shadowed_scenario)[0].planes[0]
        assert planes.clearance(1.0) < 0.0
        assert planes.clearance(12.0) > 0.0

    def test_region_count(self, shadowed_scenario):
        planes = build_receivers(shadowed_scenario)[0].planes[0]
        assert planes.n_regions == 1
        assert isinstance(planes, LinkPlanes)


def test_receivers_cover_users_and_array(scenario):
    keys = [r.key for r in build_receivers(scenario)]
    assert keys == ["u0", "e0.0", "e0.1"]


class TestPhasePenalty:
    def test_zero_at_exact_phase(self, rng):
        theta = rng.uniform(-np.pi, np.pi, 10)
        np.testing.assert_allclose(phase_residual(np.cos(theta), -np.sin(theta), theta), 0.0, atol=1e-15)

    def test_majorant_dominates(self, rng):
        for _ in range(2000):
            radius, angle = rng.uniform(0.0, 1.0), rng.uniform(-np.pi, np.pi)
            R0, I0 = radius * np.cos(angle), radius * np.sin(angle)
            theta0 = rng.uniform(-np.pi, np.pi)
            dR, dI, dT = rng.uniform(-0.2, 0.2, 3)
            upper = phase_majorant(R0 + dR, I0 + dI, theta0 + dT, R0, I0, theta0)
            assert upper >= phase_residual(R0 + dR, I0 + dI, theta0 + dT) - 1e-12

    def test_majorant_touches(self):
        assert phase_majorant(0.3, 0.1, 0.5, 0.3, 0.1, 0.5) == pytest.approx(phase_residual(0.3, 0.1, 0.5))

    def test_curvature_constants(self):
        assert PHASE_CURVATURE == (2.0, 2.0, 4.0)


def test_snap_layout_enforces_extent_and_spacing(scenario, rng):
    for _ in range(50):
        x = rng.uniform(-1.0, 16.0, (2, 2))
        assert _spacing_ok(scenario, snap_layout(scenario, x))
    crowded = np.array([[5.0, 5.0], [15.0, 15.0]])
    snapped = snap_layout(scenario, crowded)
    assert _spacing_ok(scenario, snapped)
    assert snapped[1, 1] == pytest.approx(15.0)


def test_snap_layout_stays_in_trust_box(rng):
    scene = make_scenario(waveguides={"pas_per_waveguide": 4})
    trust = 3.0 * scene.wavelength
    gap, length = scene.spacing, scene.waveguide_length
    spacing_active = 0
    for _ in range(300):
        # Centres packed at the minimum spacing so that most steps collide
        starts = rng.uniform(0.0, length - 3 * gap, (2, 1))
        center = snap_layout(scene, starts + np.arange(4) * gap)
        candidate = center + rng.uniform(-trust, trust, center.shape)
        snapped = snap_layout(scene, candidate)
        assert np.max(np.abs(snapped - center)) <= trust + 1e-12
        assert _spacing_ok(scene, snapped)
        spacing_active += not np.allclose(snapped, np.clip(candidate, 0.0, length))
    assert spacing_active > 0


class TestEvaluation:
    def test_exact_phases_match_full_evaluation(self, context, layout):
        bounds = robustness_bounds(context.scenario, layout)
        phases = {rec.key: link_response(context, rec, layout)[1] for rec in context.receivers}
        frozen = evaluate_layout(context, layout, phases, bounds)
        full = evaluate_layout(context, layout)
        assert frozen.objective == pytest.approx(full.objective, rel=1e-9)
        assert frozen.margin == pytest.approx(full.margin, rel=1e-6, abs=1e-9)

    def test_frozen_evaluation_needs_bounds(self, context, layout):
        phases = {rec.key: link_response(context, rec, layout)[1] for rec in context.receivers}
        with pytest.raises(OptimizationError):
            evaluate_layout(context, layout, phases)

    def test_exact_lifting_has_no_residual(self, context, layout):
        groups = _lifted_groups(context)
        bounds = robustness_bounds(context.scenario, layout)
        amplitudes = {rec.key: link_response(context, rec, layout)[0] for rec in context.receivers}
        anchor = Stage2Iterate.exact(context, groups, layout, amplitudes, bounds)
        assert anchor.gamma_residual() < 1e-12
        # one user group and one array group stacking both antennas
        assert anchor.lifted["e0"].shape == (8, 8)

    def test_stage1_rejects_bad_anchor(self, context, layout):
        bad = np.array([[3.0, 3.001], [8.0, 11.0]])
        bounds = robustness_bounds(context.scenario, layout)
        phases = {rec.key: link_response(context, rec, bad)[1] for rec in context.receivers}
        anchor = Stage1Iterate.at(context, bad, phases, bounds)
        with pytest.raises(OptimizationError):
            stage1_build(context, anchor, bounds)


class TestStages:
    def test_stage1_never_loses(self, context, layout):
        bounds = robustness_bounds(context.scenario, layout)
        phases = {rec.key: link_response(context, rec, layout)[1] for rec in context.receivers}
        start = evaluate_layout(context, layout, phases, bounds)
        result = stage1_iterate(context, layout)
        assert result.value.objective >= start.objective - 1e-6 * max(1.0, abs(start.objective))
        assert result.value.certified(context.settings.certificate_tol)
        assert _spacing_ok(context.scenario, result.x)
        accepted = [row.objective for row in result.trace if row.accepted]
        assert all(b >= a - 1e-6 * max(1.0, abs(a)) for a, b in zip(accepted, accepted[1:]))
        assert len(result.layouts) == len(accepted) + 1

    def test_stage2_stays_in_trust_region(self, context, layout):
        start = evaluate_layout(context, layout)
        result = stage2_iterate(context, layout)
        trust = context.settings.stage2_trust_wavelengths * context.scenario.wavelength
        assert np.max(np.abs(result.x - layout)) <= trust + 1e-6
        assert result.value.objective >= start.objective
        assert _spacing_ok(context.scenario, result.x)
        assert all(row.stage == 2 for row in result.trace)

    def test_optimize_positions_never_worse(self, blocked_scenario, layout, settings):
        state = initialize_state(blocked_scenario, layout, settings=settings)
        ctx = PositioningContext.build(blocked_scenario, state, settings)
        start = evaluate_layout(ctx, layout)
        result = optimize_positions(blocked_scenario, state, settings)
        assert result.value.objective >= start.objective - 1e-9
        assert result.value.certified(settings.certificate_tol)
        assert _spacing_ok(blocked_scenario, result.state.x)
        assert result.moved == bool(np.any(result.state.x != layout))
        assert {row.stage for row in result.positions} <= {1, 2}
        np.testing.assert_array_equal(result.state.w, state.w)
