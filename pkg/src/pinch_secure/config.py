"""Configuration for the pinch-secure optimizer."""

from functools import lru_cache
from typing import List, Tuple

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Numerical settings shared by the optimizers, certifier and CLI."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="PINCH_",
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"

    # Conic solver
    solver_order: List[str] = ["CLARABEL", "SCS"]
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_solver_iters: int = 2000

    # MM loops
    mm_max_iter: int = 30
    mm_tol_bits: float = 1e-4
    monotone_slack: float = 1e-6

    # Penalties for the rank-one and Schur-link difference-of-convex terms
    rank_penalty: float = 5.0
    dc_penalty: float = 50.0

    # Rank-one recovery
    rank_one_target: float = 0.999
    randomization_candidates: int = 100

    # Initialization
    an_init_fraction: float = 0.01

    # Positioning
    stage1_step_m: float = 2.0
    stage1_max_iter: int = 10
    stage2_trust_wavelengths: float = 3.0
    stage2_max_iter: int = 10
    stage2_penalty_rounds: int = 6
    gamma_residual_tol: float = 1e-5
    blockage_floor: float = 1e-8
    box_penalty: float = 1.0

    # Uncertainty bound
    bound_samples: int = 10000
    bound_include_height: bool = False

    # Certification
    leak_grid: Tuple[int, int, int] = (41, 41, 21)
    leak_refine_starts: int = 3
    leak_tolerance: float = 1e-3
    ball_samples: int = 2000
    certificate_tol: float = 1e-6

    # BCD
    bcd_max_iter: int = 15
    bcd_tol_bits: float = 1e-3


@lru_cache()
def get_settings() -> Settings:
    return Settings()
