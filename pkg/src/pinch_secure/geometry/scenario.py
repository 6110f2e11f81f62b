"""Scenario description: config file schema, validated geometry and random scenes."""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from ..constants import SPEED_OF_LIGHT, dbm_to_watts
from .shadow import regions_for_observer
from .shapes import Blockage, BlockedRegion, GeometryError, Waveguide

logger = logging.getLogger(__name__)

_MAX_USER_DRAWS = 10_000


class ScenarioError(Exception):
    """Invalid or unreadable scenario configuration."""
    pass


# ============ Config file schema ============

class WaveguidesConfig(BaseModel):
    count: int = Field(2, ge=1)
    length_m: float = Field(15.0, gt=0)
    height_m: float = Field(5.0, gt=0)
    feed_y_m: List[float] = Field(default_factory=lambda: [5.0, 10.0])
    pas_per_waveguide: int = Field(2, ge=1)
    min_spacing_m: Optional[float] = Field(None, ge=0, description="Defaults to half a wavelength")

    @model_validator(mode="after")
    def _feeds_match_count(self):
        if len(self.feed_y_m) != self.count:
            raise ValueError(f"feed_y_m has {len(self.feed_y_m)} entries for {self.count} waveguides")
        return self


class UserConfig(BaseModel):
    x: float
    y: float


class EavesdropperConfig(BaseModel):
    x: float
    y: float
    theta_deg: float = 0.0
    antennas: int = Field(2, ge=1)


class BlockageConfig(BaseModel):
    x0: float
    x1: float
    y0: float
    y1: float
    height: float = Field(..., gt=0)


class PhysicsConfig(BaseModel):
    fc_hz: float = Field(28e9, gt=0)
    eta_eff: float = Field(1.42, gt=0)
    eps_r: float = Field(2.1, gt=0)
    tan_delta: float = Field(2e-4, ge=0)
    theta_smooth: float = Field(500.0, gt=0)


class PowerConfig(BaseModel):
    p_max_dbm: float = 20.0
    per_waveguide_dbm: Optional[List[float]] = None
    optimize_split: bool = False


class SecurityConfig(BaseModel):
    r_th_bps_hz: float = Field(1.0, ge=0)


class UncertaintyConfig(BaseModel):
    kappa2: float = Field(0.1, ge=0)
    pos_err_m: float = Field(0.01, ge=0)
    arc_err_deg: float = Field(1.0, ge=0, lt=180)


class NoiseConfig(BaseModel):
    user_dbm: float = -90.0
    ea_dbm: float = -90.0


class SamplingConfig(BaseModel):
    """Ranges for random scenes."""
    area_m: float = Field(15.0, gt=0)
    user_count: int = Field(2, ge=1)
    blockage_count: int = Field(2, ge=0)
    blockage_y_len_m: float = Field(2.8, gt=0)
    blockage_x_len_range_m: Tuple[float, float] = (3.0, 5.0)
    blockage_height_range_m: Tuple[float, float] = (5.0, 8.0)

    @field_validator("blockage_x_len_range_m", "blockage_height_range_m")
    @classmethod
    def _ordered(cls, value):
        if value[0] <= 0 or value[1] < value[0]:
            raise ValueError(f"Range {value} must be positive and ordered")
        return value


class ScenarioConfig(BaseModel):
    """Scenario file schema; key names are the ones the CLI documents."""
    waveguides: WaveguidesConfig = Field(default_factory=WaveguidesConfig)
    users: List[UserConfig] = Field(default_factory=list)
    eavesdroppers: List[EavesdropperConfig] = Field(default_factory=list)
    blockages: List[BlockageConfig] = Field(default_factory=list)
    physics: PhysicsConfig = Field(default_factory=PhysicsConfig)
    power: PowerConfig = Field(default_factory=PowerConfig)
    security: SecurityConfig = Field(default_factory=SecurityConfig)
    uncertainty: UncertaintyConfig = Field(default_factory=UncertaintyConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)


# ============ Validated scenario ============

@dataclass(frozen=True, eq=False)
class Eavesdropper:
    """Uniform linear array with reference point on the ground, spacing lambda/2."""
    index: int
    position: NDArray[np.float64]
    theta_deg: float
    antennas: int


@dataclass(frozen=True, eq=False)
class Scenario:
    """System geometry and physical parameters, all in SI units (power in W)."""
    waveguides: Tuple[Waveguide, ...]
    pas_per_waveguide: int
    users: NDArray[np.float64]
    eavesdroppers: Tuple[Eavesdropper, ...]
    blockages: Tuple[Blockage, ...]
    fc_hz: float = 28e9
    theta_smooth: float = 500.0
    eta_eff: float = 1.42
    eps_r: float = 2.1
    tan_delta: float = 2e-4
    p_max: float = 0.1
    per_waveguide_max: Optional[NDArray[np.float64]] = None
    optimize_split: bool = False
    min_spacing: Optional[float] = None
    noise_user: float = 1e-12
    noise_ea: float = 1e-12
    r_th: float = 1.0
    kappa2: float = 0.1
    pos_err: float = 0.01
    arc_err_deg: float = 1.0
    area_m: float = 15.0
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def __post_init__(self):
        if self.theta_smooth <= 0:
            raise ScenarioError(f"Smoothing parameter must be positive, got {self.theta_smooth}")
        if min(self.pos_err, self.arc_err_deg, self.kappa2) < 0:
            raise ScenarioError("Uncertainty radii must be nonnegative")
        if self.arc_err_deg >= 180:
            raise ScenarioError("Orientation error must stay below 180 degrees")
        if self.noise_user <= 0 or self.noise_ea <= 0:
            raise ScenarioError("Noise powers must be positive")
        # Spatial degrees of freedom are the M*N activated PAs
        streams = self.n_users + sum(e.antennas for e in self.eavesdroppers)
        if streams > self.n_links:
            raise ScenarioError(
                f"K + G*T = {streams} exceeds the {self.n_links} available PAs"
            )
        if self.per_waveguide_max is not None and len(self.per_waveguide_max) != self.n_waveguides:
            raise ScenarioError("per_waveguide_dbm must list one budget per waveguide")
        for k, user in enumerate(self.users):
            for blockage in self.blockages:
                if blockage.contains(user):
                    raise ScenarioError(f"User {k} at {user} lies inside a blockage")
        for eave in self.eavesdroppers:
            for blockage in self.blockages:
                if blockage.contains(eave.position):
                    raise ScenarioError(f"Eavesdropper {eave.index} lies inside a blockage")

    # ---- sizes ----
    @property
    def n_waveguides(self) -> int:
        return len(self.waveguides)

    @property
    def n_users(self) -> int:
        return int(self.users.shape[0])

    @property
    def n_eavesdroppers(self) -> int:
        return len(self.eavesdroppers)

    @property
    def n_links(self) -> int:
        return self.n_waveguides * self.pas_per_waveguide

    @property
    def waveguide_length(self) -> float:
        return self.waveguides[0].length

    # ---- derived physics ----
    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc_hz

    @property
    def guided_wavelength(self) -> float:
        return self.wavelength / self.eta_eff

    @property
    def eta_hat(self) -> float:
        """Free-space gain constant c^2 / (16 pi^2 f_c^2)."""
        return SPEED_OF_LIGHT**2 / (16.0 * math.pi**2 * self.fc_hz**2)

    @property
    def spacing(self) -> float:
        return self.wavelength / 2.0 if self.min_spacing is None else self.min_spacing

    @property
    def kappa(self) -> float:
        return math.sqrt(self.kappa2)

    @property
    def waveguide_budgets(self) -> NDArray[np.float64]:
        if self.per_waveguide_max is not None:
            return np.asarray(self.per_waveguide_max, dtype=float)
        return np.full(self.n_waveguides, self.p_max / self.n_waveguides)

    @cached_property
    def user_regions(self) -> List[List[BlockedRegion]]:
        return [regions_for_observer(user, self.blockages) for user in self.users]

    # ---- variants used by baselines and sweeps ----
    def without_blockages(self) -> "Scenario":
        return replace(self, blockages=())

    def without_eavesdroppers(self) -> "Scenario":
        return replace(self, eavesdroppers=())

    def lossless(self) -> "Scenario":
        return replace(self, tan_delta=0.0)

    def with_power(self, p_max_dbm: float) -> "Scenario":
        scale = dbm_to_watts(p_max_dbm) / self.p_max
        budgets = None if self.per_waveguide_max is None else self.per_waveguide_max * scale
        return replace(self, p_max=dbm_to_watts(p_max_dbm), per_waveguide_max=budgets)

    def with_kappa(self, kappa2: float) -> "Scenario":
        return replace(self, kappa2=kappa2)

    def with_ea_uncertainty(self, pos_err: float, arc_err_deg: float) -> "Scenario":
        return replace(self, pos_err=pos_err, arc_err_deg=arc_err_deg)

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "Scenario":
        wg = config.waveguides
        waveguides = tuple(
            Waveguide(index=n, feed_y=y, length=wg.length_m, height=wg.height_m)
            for n, y in enumerate(wg.feed_y_m)
        )
        users = np.array([[u.x, u.y, 0.0] for u in config.users], dtype=float).reshape(-1, 3)
        eavesdroppers = tuple(
            Eavesdropper(
                index=g,
                position=np.array([e.x, e.y, 0.0]),
                theta_deg=e.theta_deg,
                antennas=e.antennas,
            )
            for g, e in enumerate(config.eavesdroppers)
        )
        try:
            blockages = tuple(
                Blockage(b.x0, b.x1, b.y0, b.y1, b.height) for b in config.blockages
            )
        except GeometryError as e:
            raise ScenarioError(str(e)) from e
        per_waveguide = None
        if config.power.per_waveguide_dbm is not None:
            per_waveguide = np.array([dbm_to_watts(v) for v in config.power.per_waveguide_dbm])
        return cls(
            waveguides=waveguides,
            pas_per_waveguide=wg.pas_per_waveguide,
            users=users,
            eavesdroppers=eavesdroppers,
            blockages=blockages,
            fc_hz=config.physics.fc_hz,
            theta_smooth=config.physics.theta_smooth,
            eta_eff=config.physics.eta_eff,
            eps_r=config.physics.eps_r,
            tan_delta=config.physics.tan_delta,
            p_max=dbm_to_watts(config.power.p_max_dbm),
            per_waveguide_max=per_waveguide,
            optimize_split=config.power.optimize_split,
            min_spacing=wg.min_spacing_m,
            noise_user=dbm_to_watts(config.noise.user_dbm),
            noise_ea=dbm_to_watts(config.noise.ea_dbm),
            r_th=config.security.r_th_bps_hz,
            kappa2=config.uncertainty.kappa2,
            pos_err=config.uncertainty.pos_err_m,
            arc_err_deg=config.uncertainty.arc_err_deg,
            area_m=config.sampling.area_m,
            sampling=config.sampling,
        )


def load_scenario_config(path: Union[str, Path]) -> ScenarioConfig:
    """Read and validate a JSON scenario file.

    Raises:
        ScenarioError: If the file is missing, not JSON, or fails validation
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return ScenarioConfig.model_validate(data)
    except FileNotFoundError as e:
        raise ScenarioError(f"Scenario file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ScenarioError(f"Scenario file {path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise ScenarioError(f"Scenario file {path} failed validation: {e}") from e


def load_scenario(path: Union[str, Path]) -> Scenario:
    config = load_scenario_config(path)
    scenario = Scenario.from_config(config)
    logger.info(
        f"Loaded scenario {path}: N={scenario.n_waveguides}, M={scenario.pas_per_waveguide}, "
        f"K={scenario.n_users}, G={scenario.n_eavesdroppers}, Q={len(scenario.blockages)}"
    )
    return scenario


def sample_random_scenario(rng: np.random.Generator, template: ScenarioConfig) -> Scenario:
    """Draw users and blockages inside the template's service area.

    Eavesdroppers, waveguides and physics come from the template. Boxes have a
    fixed y-length, an x-length and a height drawn from the template ranges, and
    are placed uniformly inside the area; users are redrawn until they are
    outside every box.

    Raises:
        GeometryError: If the template cannot host K + G*T streams
        ScenarioError: If users cannot be placed outside the boxes
    """
    sampling = template.sampling
    streams = sampling.user_count + sum(e.antennas for e in template.eavesdroppers)
    n_links = template.waveguides.count * template.waveguides.pas_per_waveguide
    if streams > n_links:
        raise GeometryError(f"Template needs K + G*T = {streams} streams but has {n_links} PAs")

    area = sampling.area_m
    blockages = []
    for _ in range(sampling.blockage_count):
        x_len = rng.uniform(*sampling.blockage_x_len_range_m)
        y_len = sampling.blockage_y_len_m
        x0 = rng.uniform(0.0, max(area - x_len, 0.0))
        y0 = rng.uniform(0.0, max(area - y_len, 0.0))
        height = rng.uniform(*sampling.blockage_height_range_m)
        blockages.append(
            BlockageConfig(x0=x0, x1=x0 + x_len, y0=y0, y1=y0 + y_len, height=height)
        )
    # Boxes swallowing an eavesdropper would make the scene degenerate
    eave_points = [np.array([e.x, e.y, 0.0]) for e in template.eavesdroppers]
    blockages = [
        b for b in blockages
        if not any(Blockage(b.x0, b.x1, b.y0, b.y1, b.height).contains(p) for p in eave_points)
    ]
    boxes = [Blockage(b.x0, b.x1, b.y0, b.y1, b.height) for b in blockages]

    users = []
    draws = 0
    while len(users) < sampling.user_count:
        if draws == _MAX_USER_DRAWS:
            raise ScenarioError(
                f"Placed {len(users)} of {sampling.user_count} users in {_MAX_USER_DRAWS} draws; "
                f"blockages cover too much of the {area} m area"
            )
        draws += 1
        point = np.array([rng.uniform(0.0, area), rng.uniform(0.0, area), 0.0])
        if any(box.contains(point) for box in boxes):
            continue
        users.append(UserConfig(x=float(point[0]), y=float(point[1])))

    config = template.model_copy(update={"users": users, "blockages": blockages})
    return Scenario.from_config(config)
