"""Shadow regions, clearance metrics and scenario loading."""

import json

import numpy as np
import pytest

from pinch_secure.geometry import (
    Blockage,
    BlockedRegion,
    GeometryError,
    ScenarioError,
    Waveguide,
    blocked_intervals,
    clearance,
    load_scenario,
    load_scenario_config,
    min_clearance_points,
    sample_random_scenario,
    segment_blocked,
    shadow_region,
    smoothed_gain,
    smoothed_gains,
)

from .conftest import SHADOW_BOX, make_config, make_scenario

OBSERVER = np.array([10.0, 5.0, 0.0])


@pytest.fixture
def box():
    return Blockage(**SHADOW_BOX)


class TestShadowRegion:
    @pytest.mark.parametrize(
        "point, shadowed",
        [
            ((0.0, 5.0, 1.0), True),
            ((0.0, 5.0, 8.0), True),
            ((0.0, 5.0, 20.0), False),
            ((12.0, 5.0, 1.0), False),
        ],
    )
    def test_known_points(self, box, point, shadowed):
        region = shadow_region(box, OBSERVER)
        assert region.contains(point) is shadowed
        assert bool(segment_blocked(OBSERVER, np.array(point), box)) is shadowed

    def test_normals_are_unit(self, box):
        region = shadow_region(box, OBSERVER)
        np.testing.assert_allclose(np.linalg.norm(region.normals, axis=1), 1.0)

    def test_clearance_sign_matches_segment_test(self, box, rng):
        region = shadow_region(box, OBSERVER)
        points = np.column_stack([
            rng.uniform(-5.0, 15.0, 4000),
            rng.uniform(-5.0, 15.0, 4000),
            rng.uniform(0.0, 15.0, 4000),
        ])
        values = clearance(points, region)
        # Points near a plane may fall either way under rounding
        keep = np.abs(values) > 1e-3
        blocked = segment_blocked(OBSERVER, points[keep], box)
        np.testing.assert_array_equal(values[keep] <= 0.0, blocked)
        assert blocked.any() and not blocked.all()

    def test_plane_order_does_not_matter(self, box, rng):
        region = shadow_region(box, OBSERVER)
        planes = np.column_stack([region.normals, region.offsets])
        # Planes come back in lexicographic order, so a shuffled copy sorts back to them
        shuffled = planes[rng.permutation(region.n_planes)]
        np.testing.assert_array_equal(np.unique(shuffled, axis=0), planes)

        permuted = BlockedRegion(
            observer=region.observer, normals=shuffled[:, :3], offsets=shuffled[:, 3]
        )
        points = rng.uniform(-5.0, 15.0, (500, 3))
        np.testing.assert_allclose(clearance(points, permuted), clearance(points, region), atol=1e-12)
        assert [permuted.contains(p) for p in points] == [region.contains(p) for p in points]

    def test_observer_inside_box_raises(self, box):
        with pytest.raises(GeometryError):
            shadow_region(box, box.center)

    def test_clearance_without_regions_is_infinite(self):
        values = min_clearance_points(np.zeros((4, 3)), [])
        assert np.all(np.isposinf(values))


class TestSmoothedGain:
    def test_unblocked_link_gain_one(self):
        assert smoothed_gain((0, 0, 5), (3, 4, 0), np.inf, 500.0) == 1.0

    def test_zero_clearance_is_half(self):
        assert smoothed_gain((0, 0, 5), (3, 4, 0), 0.0, 500.0) == pytest.approx(0.5)

    def test_deep_shadow_vanishes(self):
        gains = smoothed_gains([-1.0, 1.0], [5.0, 5.0], 500.0)
        assert gains[0] < 1e-20
        assert gains[1] == pytest.approx(1.0)

    def test_coincident_points_raise(self):
        with pytest.raises(GeometryError):
            smoothed_gain((1, 1, 0), (1, 1, 0), 0.0, 500.0)
        with pytest.raises(GeometryError):
            smoothed_gains([0.0], [0.0], 500.0)


class TestBlockedIntervals:
    def test_interval_matches_region(self, box):
        scenario = make_scenario(blockages=[SHADOW_BOX], users=[{"x": 10.0, "y": 5.0}])
        waveguide = scenario.waveguides[0]
        intervals = blocked_intervals(waveguide, OBSERVER, scenario)
        assert len(intervals) == 1
        lower, upper = intervals[0]
        assert 0.0 <= lower < upper <= waveguide.length
        region = shadow_region(box, OBSERVER)
        inside = waveguide.pa_points(np.linspace(lower + 1e-3, upper - 1e-3, 25))
        assert all(region.contains(p) for p in inside)
        outside = waveguide.pa_points([max(lower - 0.1, 0.0), min(upper + 0.1, waveguide.length)])
        assert not any(region.contains(p) for p in outside if p[0] < lower or p[0] > upper)

    def test_no_blockages(self, scenario):
        assert blocked_intervals(scenario.waveguides[0], OBSERVER, scenario) == []


class TestShapes:
    def test_empty_box_raises(self):
        with pytest.raises(GeometryError):
            Blockage(1.0, 1.0, 0.0, 1.0, 2.0)

    def test_waveguide_points(self):
        wg = Waveguide(index=0, feed_y=5.0, length=15.0, height=5.0)
        pts = wg.pa_points([1.0, 2.0])
        np.testing.assert_allclose(pts, [[1.0, 5.0, 5.0], [2.0, 5.0, 5.0]])

    def test_bad_waveguide(self):
        with pytest.raises(GeometryError):
            Waveguide(index=0, feed_y=5.0, length=0.0, height=5.0)


class TestScenario:
    def test_counts(self, scenario):
        assert scenario.n_waveguides == 2
        assert scenario.n_links == 4
        assert scenario.n_users == 1
        assert scenario.n_eavesdroppers == 1
        assert scenario.spacing == pytest.approx(scenario.wavelength / 2)

    def test_too_many_streams(self):
        with pytest.raises(ScenarioError):
            make_scenario(users=[{"x": 1.0, "y": 1.0}, {"x": 2.0, "y": 2.0}, {"x": 3.0, "y": 1.0}])

    def test_user_inside_blockage(self):
        with pytest.raises(ScenarioError):
            make_scenario(blockages=[SHADOW_BOX], users=[{"x": 4.0, "y": 5.0}])

    def test_variants(self, blocked_scenario):
        assert blocked_scenario.without_blockages().blockages == ()
        assert blocked_scenario.without_eavesdroppers().n_eavesdroppers == 0
        assert blocked_scenario.lossless().tan_delta == 0.0
        assert blocked_scenario.with_power(30.0).p_max == pytest.approx(1.0)
        assert blocked_scenario.with_kappa(0.2).kappa2 == 0.2
        assert blocked_scenario.with_ea_uncertainty(0.05, 0.0).pos_err == 0.05

    def test_budgets_split_evenly(self, scenario):
        np.testing.assert_allclose(scenario.waveguide_budgets, [0.05, 0.05])

    def test_load_round_trip(self, config_file):
        scenario = load_scenario(config_file)
        assert scenario.n_users == 1
        assert scenario.eavesdroppers[0].antennas == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario_config(tmp_path / "absent.json")

    def test_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ScenarioError):
            load_scenario_config(path)

    def test_validation_failure(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"waveguides": {"count": 0}}), encoding="utf-8")
        with pytest.raises(ScenarioError):
            load_scenario_config(path)

    def test_random_scene_users_outside_boxes(self, rng):
        template = make_config(sampling={"user_count": 1, "blockage_count": 2})
        for _ in range(5):
            scene = sample_random_scenario(rng, template)
            assert scene.n_users == 1
            for user in scene.users:
                assert not any(b.contains(user) for b in scene.blockages)

    def test_random_scene_is_reproducible(self):
        template = make_config(sampling={"user_count": 1, "blockage_count": 2})
        first = sample_random_scenario(np.random.default_rng(11), template)
        second = sample_random_scenario(np.random.default_rng(11), template)
        np.testing.assert_array_equal(first.users, second.users)
        assert [b.footprint() for b in first.blockages] == [b.footprint() for b in second.blockages]

    def test_random_blockage_heights_in_range(self, rng):
        template = make_config(sampling={"user_count": 1, "blockage_count": 2})
        heights = [
            b.height
            for _ in range(1000)
            for b in sample_random_scenario(rng, template).blockages
        ]
        assert heights
        assert min(heights) >= 5.0 and max(heights) <= 8.0

    def test_random_scene_without_room_for_users(self, rng):
        template = make_config(
            eavesdroppers=[{"x": 16.0, "y": 7.0, "theta_deg": 30.0, "antennas": 2}],
            sampling={
                "area_m": 15.0, "user_count": 1, "blockage_count": 1,
                "blockage_y_len_m": 15.0, "blockage_x_len_range_m": [15.0, 15.0],
            },
        )
        with pytest.raises(ScenarioError):
            sample_random_scenario(rng, template)
