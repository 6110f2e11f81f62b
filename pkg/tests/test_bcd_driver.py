"""BCD loop, baseline schemes and certification."""

import numpy as np
import pytest
from pydantic import ValidationError

from pinch_secure.bcd_driver import (
    RESULT_FIELDS,
    SCHEMES,
    CertificationReport,
    RunOptions,
    certify,
    default_layout,
    feed_point_layout,
    fraction_of_power_on_noise,
    is_monotone,
    result_row,
    run_baseline,
    run_bcd,
    uniform_state,
)
from pinch_secure.beamforming_opt import back_off_beams, initialize_state
from pinch_secure.rates import budgets_ok

from .conftest import make_scenario


class TestRunOptions:
    def test_defaults(self):
        options = RunOptions()
        assert options.max_iter == 15
        assert options.certify_strategy == "structured"

    @pytest.mark.parametrize("field, value", [("max_iter", 0), ("tol_bits", 0.0), ("mm_max_iter", 0)])
    def test_rejects_bad_values(self, field, value):
        with pytest.raises(ValidationError):
            RunOptions(**{field: value})

    def test_apply_overrides_only_set_caps(self, settings):
        applied = RunOptions(mm_max_iter=2, stage2_penalty_rounds=1).apply(settings)
        assert applied.mm_max_iter == 2
        assert applied.stage2_penalty_rounds == 1
        assert applied.stage1_max_iter == settings.stage1_max_iter
        assert RunOptions().apply(settings) is settings


class TestLayouts:
    def test_default_layout_centres(self, scenario):
        x = default_layout(scenario)
        np.testing.assert_allclose(x, [[3.75, 11.25], [3.75, 11.25]])

    def test_feed_point_layout_spacing(self, scenario):
        x = feed_point_layout(scenario)
        np.testing.assert_allclose(x[:, 0], 0.0)
        np.testing.assert_allclose(np.diff(x, axis=1), scenario.spacing)

    def test_uniform_state_splits_budget(self, scenario):
        state = uniform_state(scenario, default_layout(scenario))
        np.testing.assert_allclose(state.waveguide_power(), scenario.waveguide_budgets)
        assert fraction_of_power_on_noise(state, scenario.p_max) == pytest.approx(0.5)
        assert budgets_ok(state, scenario.p_max)


class TestCertification:
    def test_report_flags(self):
        report = CertificationReport(
            sum_rate=3.0, leak_max=1.0005, leak_margin=0.0, leak_threshold=1.0,
            budgets_ok=True, power_feasible=True, geometry_ok=True, tolerance=1e-3,
        )
        assert report.secure and report.passed
        leaky = CertificationReport(
            sum_rate=3.0, leak_max=1.2, leak_margin=-0.1, leak_threshold=1.0,
            budgets_ok=True, power_feasible=True, geometry_ok=True,
        )
        assert not leaky.secure and not leaky.passed

    def test_initial_design_passes(self, scenario, layout, settings):
        state = initialize_state(scenario, layout, settings=settings)
        report = certify(scenario, state, settings)
        assert report.passed
        assert report.leakage.shape == (1, 1)
        assert report.leak_max <= scenario.r_th + settings.leak_tolerance


def test_is_monotone():
    assert is_monotone([1.0, 1.0, 2.0])
    assert not is_monotone([1.0, 0.5])
    assert is_monotone([1.0, 1.0 - 1e-9])


class TestRuns:
    def test_bcd_single_iteration(self, scenario, settings):
        result = run_bcd(scenario, RunOptions(max_iter=1), settings)
        assert result.scheme == "Proposed"
        assert result.iterations == 1
        assert [row.block for row in result.trace] == ["init", "beamforming", "positioning"]
        assert is_monotone(result.objective_trace)
        assert result.certification.passed
        assert result.sum_rate == pytest.approx(result.certification.sum_rate)
        assert all(row["bcd_iter"] == 1 for row in result.positions)

    def test_unknown_scheme(self, scenario):
        with pytest.raises(ValueError):
            run_baseline("Oracle", scenario)

    def test_upper_bound_has_no_leakage(self, blocked_scenario, settings):
        result = run_baseline("UpperBound", blocked_scenario, RunOptions(max_iter=1), settings)
        assert result.scheme == "UpperBound"
        assert result.certification.leak_max == 0.0
        assert result.sum_rate > 0.0

    def test_bm1_keeps_fixed_beams(self, blocked_scenario, settings):
        result = run_baseline("BM1_blk", blocked_scenario, RunOptions(max_iter=1), settings)
        start = back_off_beams(
            blocked_scenario, uniform_state(blocked_scenario, default_layout(blocked_scenario))
        )
        np.testing.assert_allclose(result.state.w, start.w)
        np.testing.assert_allclose(result.state.V, start.V)
        assert "beamforming" not in {row.block for row in result.trace}

    def test_bm2_keeps_feed_point_layout(self, blocked_scenario, settings):
        result = run_baseline("BM2_blk", blocked_scenario, RunOptions(max_iter=3), settings)
        np.testing.assert_array_equal(result.state.x, feed_point_layout(blocked_scenario))
        assert result.iterations == 1

    def test_naive_evaluated_on_real_scene(self, blocked_scenario, settings):
        result = run_baseline("Naive", blocked_scenario, RunOptions(max_iter=1), settings)
        assert result.scheme == "Naive"
        if result.certification.secure:
            assert result.sum_rate == pytest.approx(result.certification.sum_rate)
        else:
            assert result.sum_rate == 0.0

    def test_result_row(self, scenario, settings):
        result = run_baseline("BM2_noblk", scenario, RunOptions(max_iter=1), settings)
        row = result_row(result, scenario, seed=7)
        assert tuple(row) == RESULT_FIELDS
        assert row["seed"] == 7
        assert row["scheme"] == "BM2_noblk"
        assert row["p_max_dbm"] == pytest.approx(20.0)
        assert row["scheme"] in SCHEMES


class TestSchemeComparison:
    def test_blockage_shadowing_the_eavesdropper_saves_noise_power(self, settings):
        # The box hides the eavesdropper from every point of both waveguides; the user stays in LoS
        scene = make_scenario(
            eavesdroppers=[{"x": 11.0, "y": 13.0, "theta_deg": 30.0, "antennas": 2}],
            blockages=[{"x0": 5.0, "x1": 14.0, "y0": 11.5, "y1": 12.5, "height": 6.0}],
            uncertainty={"kappa2": 0.1, "pos_err_m": 0.0, "arc_err_deg": 0.0},
        )
        options = RunOptions(max_iter=1)
        aware = run_baseline("Proposed", scene, options, settings)
        unaware = run_baseline("Proposed_noblk", scene, options, settings)
        assert fraction_of_power_on_noise(aware.state, scene.p_max) < fraction_of_power_on_noise(
            unaware.state, scene.p_max
        )

    @pytest.mark.parametrize("scene_name", ["scenario", "blocked_scenario"])
    def test_ordering_at_20_dbm(self, request, settings, scene_name):
        scene = request.getfixturevalue(scene_name)
        options = RunOptions(max_iter=1)
        upper = run_baseline("UpperBound", scene, options, settings)
        proposed = run_baseline("Proposed", scene, options, settings)
        bm2 = run_baseline("BM2_blk", scene, options, settings)
        from_feed = run_bcd(scene, options, settings, x0=feed_point_layout(scene))
        tol = 1e-4 * max(1.0, bm2.sum_rate)
        assert upper.sum_rate >= proposed.sum_rate
        assert upper.sum_rate >= bm2.sum_rate
        # Same start as BM2, plus a positioning block that only accepts improvements
        assert from_feed.sum_rate >= bm2.sum_rate - tol
