"""
Configuration settings for cvarmdp
"""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Solver settings loaded from environment variables (prefix CVAR_)"""

    # App Settings
    log_level: str = "INFO"

    # Numerical tolerances
    prob_tolerance: float = 1e-9
    slope_tolerance: float = 1e-9
    superdiff_tolerance: float = 1e-9
    optimal_action_tolerance: float = 1e-9
    simplify_epsilon: float = 0.0

    # Resource guards
    segment_cap: int = 1_000_000
    max_iterations: int = 10_000
    max_trajectories: int = 100_000
    max_policies: int = 1_000_000
    max_grid_successors: int = 4

    # Infinite horizon
    infinite_epsilon: float = 1e-6
    runner_cutoff: float = 1e-6

    # Concurrency
    max_workers: int = 4
    parallel_backups: bool = False

    model_config = SettingsConfigDict(
        env_prefix="CVAR_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


def get_settings() -> Settings:
    """Get settings instance"""
    return Settings()


settings = get_settings()
