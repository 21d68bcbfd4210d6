import logging
import os

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="INCOMPLETE_MLE_", extra="ignore")

    log_level: str = "INFO"
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    output_dir: str = "out"
    default_horizon: float = Field(default=10.0, gt=0)


def configure_logging(level: str = "INFO") -> None:
    level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)
