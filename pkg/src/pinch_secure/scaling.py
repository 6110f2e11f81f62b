"""Unit normalisation shared by the conic optimizers.

Channels around 1e-4 and noise around 1e-12 W are far outside the range conic
solvers handle well. Power is measured in units of P_max and channels are
scaled by sqrt(P_max / sigma_ref^2), so noise becomes O(1) and SNRs keep their
values.
"""

import math
from dataclasses import dataclass

from .geometry import Scenario


@dataclass(frozen=True)
class ProblemScale:
    power: float
    noise: float

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "ProblemScale":
        return cls(power=scenario.p_max, noise=min(scenario.noise_user, scenario.noise_ea))

    @property
    def channel(self) -> float:
        return math.sqrt(self.power / self.noise)

    def noise_units(self, noise_watts: float) -> float:
        return noise_watts / self.noise

    def power_units(self, watts):
        return watts / self.power
