import os
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", extra="allow")

    REDIS_URL: str = "redis://localhost:6379/0"
    OUTPUT_DIR: str = "generated_artifacts"
    DEFAULTS_PATH: Optional[str] = None

    ODE_RTOL: float = 1e-11
    ODE_ATOL: float = 1e-13
    CATENOID_CUTOFF_MARGIN: float = 8.0
    THRESHOLD_TOL: float = 1e-7
    RESIDUAL_TOL: float = 1e-5

    LIMITSET_WORKERS: int = 1
    SEPARATION_SAMPLES: int = 10000
    WITNESS_SAMPLES: int = 2000

    WORKER_MAX_TASKS: int = 20
    RESULT_TTL: int = 86400
    CONSTRUCTION_TIME_LIMIT: int = 3600
    GEOMETRY_TIME_LIMIT: int = 900


settings = Settings()

os.makedirs(settings.OUTPUT_DIR, exist_ok=True)
