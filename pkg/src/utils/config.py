"""Configuration management using Pydantic Settings."""

from pydantic_settings import BaseSettings
from pydantic import Field, field_validator
from typing import List
from pathlib import Path


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Directory paths
    data_dir: Path = Field(
        default=Path("./data"),
        alias="DATA_DIR",
        description="Base data directory"
    )
    output_dir: Path = Field(
        default=Path("./data/outputs"),
        alias="OUTPUT_DIR",
        description="Output directory for run records, series, fields and reports"
    )

    # Logging
    log_level: str = Field(
        default="INFO",
        alias="LOG_LEVEL",
        description="Logging level"
    )

    # Execution
    workers: int = Field(
        default=1,
        ge=1,
        alias="SIM_WORKERS",
        description="Worker processes used for replica fan-out"
    )
    master_seed: int = Field(
        default=20240917,
        ge=0,
        alias="MASTER_SEED",
        description="Master seed from which every replica stream is derived"
    )

    # Numerics
    quad_ladder: List[int] = Field(
        default=[64, 128, 256],
        alias="QUAD_LADDER",
        description="Torus quadrature refinement ladder (points per axis)"
    )
    krylov_rtol: float = Field(
        default=1e-10,
        gt=0.0,
        alias="KRYLOV_RTOL",
        description="Relative residual tolerance for resolvent solves"
    )
    krylov_maxiter: int = Field(
        default=400,
        ge=1,
        alias="KRYLOV_MAXITER",
        description="Iteration budget of the first resolvent attempt"
    )
    krylov_retries: int = Field(
        default=3,
        ge=1,
        alias="KRYLOV_RETRIES",
        description="Attempts before a resolvent solve is reported as non-convergent"
    )

    @field_validator("quad_ladder")
    @classmethod
    def _increasing_even_ladder(cls, v: List[int]) -> List[int]:
        if not v or any(m <= 0 or m % 2 for m in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("QUAD_LADDER must be a non-empty increasing list of positive even sizes")
        return v

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        extra = "ignore"

    def ensure_directories(self) -> None:
        """Create data_dir, output_dir and its runs/ and reports/ folders."""
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        for sub in ("runs", "reports"):
            (self.output_dir / sub).mkdir(exist_ok=True)


# Global settings instance
settings = Settings()
