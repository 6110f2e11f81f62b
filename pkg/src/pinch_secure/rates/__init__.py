"""Rates, eavesdropping capacities and worst-case certification."""

from .leakage import (
    LeakageReport,
    ea_bound_radius,
    leakage_lmi_margin,
    worst_case_leakage,
)
from .metrics import (
    RateError,
    RateReport,
    ea_rate,
    ea_rate_quadratic,
    user_rate,
    worst_case_user_bound,
)
from .robust import (
    RobustnessBounds,
    leakage_certificate,
    rate_report,
    robust_objective,
    robustness_bounds,
)
from .state import DesignState, budgets_ok
from .trust_region import (
    TrustRegionResult,
    max_quadratic_over_ball,
    min_quadratic_over_ball,
    solve_trust_region,
)

__all__ = [
    "DesignState",
    "LeakageReport",
    "RateError",
    "RateReport",
    "RobustnessBounds",
    "TrustRegionResult",
    "budgets_ok",
    "ea_bound_radius",
    "ea_rate",
    "ea_rate_quadratic",
    "leakage_certificate",
    "leakage_lmi_margin",
    "max_quadratic_over_ball",
    "min_quadratic_over_ball",
    "rate_report",
    "robust_objective",
    "robustness_bounds",
    "solve_trust_region",
    "user_rate",
    "worst_case_leakage",
    "worst_case_user_bound",
]
