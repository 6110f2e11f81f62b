"""True robust objective and leakage certificate of a design.

These are the quantities every optimizer accepts or rejects iterates on: the
sum of exact worst-case user rate bounds and the smallest S-procedure margin
over all (user, eavesdropper) pairs.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from ..channel import ChannelSet, build_channel_set
from ..geometry import Scenario
from ..scaling import ProblemScale
from ..uncertainty import user_radius
from .leakage import ea_bound_radius, leakage_lmi_margin
from .metrics import RateReport, user_rate, worst_case_user_bound
from .state import DesignState

logger = logging.getLogger(__name__)


@dataclass
class RobustnessBounds:
    """Uncertainty radii: per-user ball radius and per-eavesdropper Frobenius radius (physical units)."""
    user: NDArray[np.float64]
    eavesdropper: NDArray[np.float64]


def robustness_bounds(
    scenario: Scenario, x: NDArray[np.float64], channels: Optional[ChannelSet] = None
) -> RobustnessBounds:
    channels = channels or build_channel_set(scenario, x)
    return RobustnessBounds(
        user=np.array([user_radius(scenario, u.h) for u in channels.users]),
        eavesdropper=np.array([
            ea_bound_radius(scenario, g, x) for g in range(scenario.n_eavesdroppers)
        ]),
    )


def robust_objective(
    scenario: Scenario, state: DesignState, channels: ChannelSet, bounds: RobustnessBounds
) -> float:
    """Sum over users of the exact worst-case rate lower bound, bits/s/Hz."""
    return float(sum(
        worst_case_user_bound(u.h, bounds.user[k], state, k, scenario.noise_user)
        for k, u in enumerate(channels.users)
    ))


def leakage_certificate(
    scenario: Scenario,
    state: DesignState,
    channels: ChannelSet,
    bounds: RobustnessBounds,
    scale: Optional[ProblemScale] = None,
) -> float:
    """Smallest leakage LMI margin over all pairs; nonnegative certifies every pair.

    Returns +inf without eavesdroppers.
    """
    scale = scale or ProblemScale.from_scenario(scenario)
    beams = state.effective_beams()
    noise_cov = state.effective_noise()
    margin = np.inf
    for g, ea in enumerate(channels.eavesdroppers):
        for k in range(state.n_users):
            margin = min(margin, leakage_lmi_margin(
                ea.H, beams[:, k], noise_cov, bounds.eavesdropper[g],
                scenario.r_th, scenario.noise_ea, scale,
            ))
    return float(margin)


def rate_report(
    scenario: Scenario, state: DesignState, channels: ChannelSet, bounds: RobustnessBounds
) -> RateReport:
    """Nominal and worst-case user rates; leakage is filled in by the certifier."""
    return RateReport(
        nominal=[user_rate(u.h, state, k, scenario.noise_user) for k, u in enumerate(channels.users)],
        worst_case=[
            worst_case_user_bound(u.h, bounds.user[k], state, k, scenario.noise_user)
            for k, u in enumerate(channels.users)
        ],
        leak_threshold=scenario.r_th,
    )
