"""
Application configuration settings.
Loads configuration from environment variables (and an optional .env file) with fallback defaults.
"""

import logging
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Simulator, meta-network and controller settings loaded from environment variables."""

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "console"  # console | json
    LOG_FILE: Optional[str] = None

    # Simulator
    CHUNK_OVERHEAD_US: float = 200.0
    METRICS_GROUP_ITERS: int = 10
    WARMUP_ITERS: int = 10
    MEASURE_ITERS: int = 50

    # Optimization trigger / execution
    GAIN_THRESHOLD: float = 0.05
    DRIFT_THRESHOLD: float = 0.10
    RESTART_PENALTY_ITERS: float = 1.0
    SAMPLE_BUFFER: int = 64
    GAIN_REFERENCE: str = "predicted"  # predicted | observed

    # Online adapting
    ADAPT_STEPS: int = 50
    ADAPT_LR: float = 1e-2
    ADAPT_SCOPE: str = "head"  # head | full

    # Offline training
    OFFLINE_LR: float = 1e-3
    OFFLINE_EPOCHS: int = 40
    BATCH_SIZE: int = 64
    AGREEMENT_TOLERANCE: float = 0.01  # relative speed gap still counted as picking the best candidate

    # Meta-network dimensions
    N_MAX: int = 16
    EMBED_DIM: int = 16
    HIDDEN_DIM: int = 32
    DENSE_DIM: int = 64
    TYPE_EMBED_DIM: int = 8

    # Tuners
    BO_BUDGET: int = 15
    BO_INIT_POINTS: int = 3
    EVAL_ITERS: int = 10

    # Harness
    POOL_WORKERS: int = 4
    DATA_DIR: str = "data"

    @property
    def CHUNK_OVERHEAD_S(self) -> float:
        """Per-chunk scheduling overhead in seconds."""
        return self.CHUNK_OVERHEAD_US * 1e-6

    @property
    def DATA_PATH(self) -> Path:
        """Directory holding shipped profiles, traces and scenarios."""
        return Path(self.DATA_DIR)

    def validate(self) -> None:
        """Validate critical settings."""
        if self.LOG_FORMAT not in ("console", "json"):
            raise ValueError(f"LOG_FORMAT must be 'console' or 'json', got {self.LOG_FORMAT!r}")

        if self.GAIN_REFERENCE not in ("predicted", "observed"):
            raise ValueError(f"GAIN_REFERENCE must be 'predicted' or 'observed', got {self.GAIN_REFERENCE!r}")

        if self.ADAPT_SCOPE not in ("head", "full"):
            raise ValueError(f"ADAPT_SCOPE must be 'head' or 'full', got {self.ADAPT_SCOPE!r}")

        if self.METRICS_GROUP_ITERS < 1:
            raise ValueError("METRICS_GROUP_ITERS must be positive")

        if self.CHUNK_OVERHEAD_US < 0:
            raise ValueError("CHUNK_OVERHEAD_US must be non-negative")

        if not 0.0 <= self.AGREEMENT_TOLERANCE < 1.0:
            raise ValueError("AGREEMENT_TOLERANCE must be in [0, 1)")


# Create global settings instance
settings = Settings()

# Validate settings on import
try:
    settings.validate()
except ValueError as e:
    logging.critical(f"Configuration error: {e}")
    # Don't raise here to allow importing in development
