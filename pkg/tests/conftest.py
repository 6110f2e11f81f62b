"""Shared fixtures: small scenes, seeded generators and fast solver settings."""

import json
from pathlib import Path

import numpy as np
import pytest

from pinch_secure.config import Settings
from pinch_secure.geometry import Scenario, ScenarioConfig

BASE_CONFIG = {
    "waveguides": {
        "count": 2,
        "length_m": 15.0,
        "height_m": 5.0,
        "feed_y_m": [5.0, 10.0],
        "pas_per_waveguide": 2,
    },
    "users": [{"x": 4.0, "y": 3.0}],
    "eavesdroppers": [{"x": 11.0, "y": 7.0, "theta_deg": 30.0, "antennas": 2}],
    "blockages": [],
    "power": {"p_max_dbm": 20.0},
    "security": {"r_th_bps_hz": 1.0},
    "uncertainty": {"kappa2": 0.1, "pos_err_m": 0.01, "arc_err_deg": 1.0},
    "noise": {"user_dbm": -90.0, "ea_dbm": -90.0},
}

SHADOW_BOX = {"x0": 3.0, "x1": 5.0, "y0": 4.0, "y1": 6.8, "height": 6.0}


def make_config(**sections) -> ScenarioConfig:
    data = json.loads(json.dumps(BASE_CONFIG))
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    return ScenarioConfig.model_validate(data)


def make_scenario(**sections) -> Scenario:
    return Scenario.from_config(make_config(**sections))


@pytest.fixture
def settings():
    """Settings with small iteration caps and coarse leakage grids."""
    return Settings(
        mm_max_iter=4,
        stage1_max_iter=3,
        stage2_max_iter=2,
        stage2_penalty_rounds=2,
        randomization_candidates=10,
        leak_grid=(5, 5, 3),
        leak_refine_starts=1,
        ball_samples=100,
        bound_samples=500,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scenario():
    """Two waveguides with two PAs each, one user, one two-antenna eavesdropper."""
    return make_scenario()


@pytest.fixture
def blocked_scenario():
    """The base scene with a box between the feed side and the eavesdropper."""
    return make_scenario(blockages=[{"x0": 7.0, "x1": 9.0, "y0": 5.5, "y1": 8.3, "height": 6.0}])


@pytest.fixture
def layout(scenario):
    return np.array([[3.0, 6.0], [8.0, 11.0]])


@pytest.fixture
def config_file(tmp_path) -> Path:
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(BASE_CONFIG), encoding="utf-8")
    return path
