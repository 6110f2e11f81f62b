"""Eavesdropper channel error bound and user error balls."""

import math

import numpy as np
import pytest

from pinch_secure.uncertainty import (
    UncertaintyError,
    delta_R,
    distance_lower_bound,
    empirical_error,
    error_bound,
    gamma_direct,
    gamma_term,
    linear_baseline_bound,
    omega,
    sample_user_error,
    user_radius,
)


def test_omega():
    assert omega(0.0) == 0.0
    assert omega(math.pi / 2) == pytest.approx(1.0)
    assert omega(4.0) == 2.0
    np.testing.assert_allclose(omega(np.array([0.0, math.pi, 10.0])), [0.0, 2.0, 2.0])
    with pytest.raises(UncertaintyError):
        omega(-0.1)


def test_gamma_closed_form_matches_difference(rng):
    wavelength = 1.07e-2
    d_hat = rng.uniform(3.0, 15.0, 100_000)
    d = d_hat + rng.uniform(-0.05, 0.05, 100_000)
    np.testing.assert_allclose(
        gamma_term(d, d_hat, wavelength), gamma_direct(d, d_hat, wavelength), atol=1e-10
    )


def test_delta_r_at_least_location_error(scenario, layout):
    points = np.array([[3.0, 5.0, 5.0], [8.0, 10.0, 5.0]])
    dr = delta_R(scenario, 0, 1, points)
    assert np.all(dr >= scenario.pos_err)
    assert np.all(dr <= scenario.pos_err + scenario.wavelength * math.sin(math.radians(0.5)) + 1e-15)


def test_distance_lower_bound_below_nominal(scenario):
    point = np.array([3.0, 5.0, 5.0])
    eave = scenario.eavesdroppers[0]
    heading = math.radians(eave.theta_deg)
    antenna = eave.position + scenario.wavelength / 2 * np.array([math.cos(heading), math.sin(heading), 0.0])
    nominal = np.linalg.norm(antenna - point)
    assert distance_lower_bound(scenario, 0, 1, point, include_height=False) < nominal
    assert distance_lower_bound(scenario, 0, 1, point, include_height=True) <= nominal


@pytest.mark.parametrize("pos_err, arc_deg", [(0.005, 0.0), (0.01, 1.0), (0.0, 2.0), (0.05, 0.5)])
def test_bound_dominates_sampled_error(scenario, layout, rng, pos_err, arc_deg):
    scene = scenario.with_ea_uncertainty(pos_err, arc_deg)
    report = error_bound(scene, 0, layout)
    stats = empirical_error(scene, 0, layout, rng, 2000)
    assert stats.max <= report.total
    assert stats.mean <= stats.max
    assert report.delta_r.shape == (2, 4)


def test_zero_uncertainty_gives_zero_bound(scenario, layout, rng):
    scene = scenario.with_ea_uncertainty(0.0, 0.0)
    assert error_bound(scene, 0, layout).total == 0.0
    assert empirical_error(scene, 0, layout, rng, 50).max == 0.0


def test_linear_bound_looser_at_large_error(scenario, layout):
    scene = scenario.with_ea_uncertainty(0.05, 1.0)
    assert linear_baseline_bound(scene, 0, layout) > error_bound(scene, 0, layout).total


def test_bound_undefined_when_ea_touches_pa(scenario):
    scene = scenario.with_ea_uncertainty(10.0, 0.0)
    with pytest.raises(UncertaintyError):
        error_bound(scene, 0, np.array([[3.0, 6.0], [8.0, 11.0]]))


def test_empirical_needs_samples(scenario, layout, rng):
    with pytest.raises(UncertaintyError):
        empirical_error(scenario, 0, layout, rng, 0)


class TestUserError:
    def test_inside_ball(self, rng):
        for _ in range(20):
            e = sample_user_error(rng, 0.3, 4)
            assert np.linalg.norm(e) <= 0.3 + 1e-12

    def test_on_sphere(self, rng):
        e = sample_user_error(rng, 0.3, 4, on_sphere=True)
        assert np.linalg.norm(e) == pytest.approx(0.3)

    def test_zero_radius(self, rng):
        assert not np.any(sample_user_error(rng, 0.0, 3))

    def test_negative_radius(self, rng):
        with pytest.raises(UncertaintyError):
            sample_user_error(rng, -1.0, 3)

    def test_radius_scales_with_kappa(self, scenario):
        h = np.array([3.0, 4.0j])
        assert user_radius(scenario, h) == pytest.approx(math.sqrt(0.1) * 5.0)
