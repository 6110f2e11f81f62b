"""Deployment geometry: waveguides, ground nodes, box blockages and their shadows."""

from .scenario import (
    Eavesdropper,
    Scenario,
    ScenarioConfig,
    ScenarioError,
    load_scenario,
    load_scenario_config,
    sample_random_scenario,
)
from .shadow import (
    blocked_intervals,
    clearance,
    min_clearance,
    min_clearance_points,
    regions_for_observer,
    segment_blocked,
    shadow_region,
    smoothed_gain,
    smoothed_gains,
)
from .shapes import Blockage, BlockedRegion, GeometryError, Vec3, Waveguide, as_vec3

__all__ = [
    "Blockage",
    "BlockedRegion",
    "Eavesdropper",
    "GeometryError",
    "Scenario",
    "ScenarioConfig",
    "ScenarioError",
    "Vec3",
    "Waveguide",
    "as_vec3",
    "blocked_intervals",
    "clearance",
    "load_scenario",
    "load_scenario_config",
    "min_clearance",
    "min_clearance_points",
    "regions_for_observer",
    "sample_random_scenario",
    "segment_blocked",
    "shadow_region",
    "smoothed_gain",
    "smoothed_gains",
]
