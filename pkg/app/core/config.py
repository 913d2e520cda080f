"""Application configuration using pydantic-settings."""

from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )

    # Application settings with defaults for local development
    app_name: str = "iim-flow"
    env: str = "development"
    debug: bool = True
    log_level: str = "INFO"

    # Root directory for run artifacts (field dumps, CSV reports, checkpoints)
    output_root: Path = Path("./output")

    # Linear solver policy
    krylov_rtol: float = 1e-10
    krylov_restart: int = 30
    krylov_max_restarts: int = 20
    mass_rtol: float = 1e-12

    # Time-step guards on the advective CFL number
    cfl_warn: float = 0.2
    cfl_max: float = 0.5

    # Upper bounds on steps and grid cells for runs requested over HTTP
    api_max_steps: int = 200
    api_max_cells: int = 16384


# Create settings instance
settings = Settings()
