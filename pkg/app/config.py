from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache


class Settings(BaseSettings):
    APP_NAME: str = "Motion Forgery Lab"
    VERSION: str = '1.0.0'
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"
    LOG_DIR: Optional[str] = None
    DEFAULT_SEED: int = 0
    REDUCTION_RATIO: int = 16
    AD_UNITS: int = 9
    GRADCHECK_TOLERANCE: float = 1e-4
    GRADCHECK_STEP: float = 1e-3
    MODEL_GRADCHECK_STEP: float = 1e-6
    LOG_EVERY: int = 10
    GRAD_CLIP_NORM: float = 10.0
    IO_RETRY_ATTEMPTS: int = 3
    IO_RETRY_MIN_WAIT: float = 0.05
    IO_RETRY_MAX_WAIT: float = 1.0
    GEN_WORKERS: int = 4

    model_config = SettingsConfigDict(
        env_file='.env',
        env_prefix='GMLN_',
        case_sensitive=True,
        extra='ignore',
    )


@lru_cache()
def get_settings() -> Settings:
    return Settings()


settings = get_settings()
