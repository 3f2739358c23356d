# app/core/config.py

from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict

class Settings(BaseSettings):
    RUN_ROOT: str = "./runs"
    LOG_LEVEL: str = "INFO"
    EMOTION_CLASSIFIER_URL: Optional[str] = None
    EMOTION_CLASSIFIER_TIMEOUT: float = 2.0
    EVAL_WORKERS: int = 1
    model_config = SettingsConfigDict(env_prefix="CAVG_", env_file=".env", env_file_encoding="utf-8")

settings = Settings()
