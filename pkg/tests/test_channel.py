"""Near-field channel construction."""

import numpy as np
import pytest

from pinch_secure.channel import (
    ChannelError,
    EAPerturbation,
    build_channel_set,
    channel_table,
    check_positions,
    ea_antenna_positions,
    ea_channel,
    factorize,
    pa_points,
    user_channel,
)

from .conftest import make_scenario


def test_derived_constants(scenario):
    assert scenario.eta_hat == pytest.approx(7.26e-7, rel=1e-2)
    assert scenario.guided_wavelength == pytest.approx(7.54e-3, rel=1e-2)
    assert scenario.wavelength == pytest.approx(1.0707e-2, rel=1e-3)


def test_unblocked_amplitude_is_free_space(scenario, layout):
    channel = user_channel(scenario, 0, layout)
    points = pa_points(scenario, layout)
    distances = np.linalg.norm(points - scenario.users[0], axis=1)
    np.testing.assert_allclose(np.abs(channel.h), np.sqrt(scenario.eta_hat) / distances)
    np.testing.assert_allclose(channel.zeta, 1.0)


def test_phase_combines_free_space_and_guided(scenario, layout):
    fac = factorize(scenario, layout, scenario.users[0])
    points = pa_points(scenario, layout)
    d = np.linalg.norm(points - scenario.users[0], axis=1)
    expected = 2 * np.pi * d / scenario.wavelength + 2 * np.pi * layout.reshape(-1) / scenario.guided_wavelength
    np.testing.assert_allclose(fac.theta, expected)
    np.testing.assert_allclose(fac.recompose(), fac.c * fac.f * np.exp(-1j * expected))


def test_link_order_is_waveguide_major(scenario, layout):
    points = pa_points(scenario, layout)
    assert points[1, 0] == layout[0, 1]
    assert points[2, 0] == layout[1, 0]
    assert points[2, 1] == scenario.waveguides[1].feed_y


def test_blocked_links_lose_power():
    box = {"x0": 2.0, "x1": 6.0, "y0": 3.5, "y1": 4.5, "height": 8.0}
    open_scene = make_scenario()
    blocked = make_scenario(blockages=[box])
    x = np.array([[4.0, 14.0], [4.0, 14.0]])
    h_open = user_channel(open_scene, 0, x)
    h_blocked = user_channel(blocked, 0, x)
    # The box stands between the user and the PAs above it at x = 4
    assert h_blocked.zeta[0] < 1e-6
    assert h_blocked.zeta[1] == pytest.approx(1.0, abs=1e-3)
    assert np.linalg.norm(h_blocked.h) < np.linalg.norm(h_open.h)


def test_ea_array_geometry(scenario):
    positions = ea_antenna_positions(scenario, 0)
    assert positions.shape == (2, 3)
    spacing = np.linalg.norm(positions[1] - positions[0])
    assert spacing == pytest.approx(scenario.wavelength / 2)
    heading = positions[1] - positions[0]
    assert np.degrees(np.arctan2(heading[1], heading[0])) == pytest.approx(30.0)


def test_ea_channel_shape(scenario, layout):
    ea = ea_channel(scenario, 0, layout)
    assert ea.H.shape == (4, 2)
    stacked = ea.stacked()
    assert stacked.c.shape == (8,)
    np.testing.assert_allclose(stacked.recompose()[:4], ea.H[:, 0])


def test_perturbation_outside_set_raises(scenario):
    with pytest.raises(ChannelError):
        ea_antenna_positions(scenario, 0, delta_e=np.array([0.02, 0.0, 0.0]))
    with pytest.raises(ChannelError):
        ea_antenna_positions(scenario, 0, delta_theta_deg=2.0)


def test_perturbed_channel_differs(scenario, layout):
    nominal = ea_channel(scenario, 0, layout).H
    moved = ea_channel(
        scenario, 0, layout, EAPerturbation(delta_e=np.array([0.01, 0.0, 0.0]), delta_theta_deg=1.0)
    ).H
    assert not np.allclose(nominal, moved)


def test_bad_layout_raises(scenario):
    with pytest.raises(ChannelError):
        check_positions(scenario, np.zeros((3, 2)))
    with pytest.raises(ChannelError):
        check_positions(scenario, np.array([[1.0, 16.0], [2.0, 3.0]]))


def test_channel_set_and_table(scenario, layout):
    channels = build_channel_set(scenario, layout)
    assert channels.user_matrix.shape == (4, 1)
    rows = channel_table(scenario, layout)
    # one user and two EA antennas, four links each
    assert len(rows) == 12
    assert {r["receiver"] for r in rows} == {"user0", "ea0"}
    assert set(rows[0]) == {"receiver", "n", "m", "t", "re", "im", "gain", "distance"}
