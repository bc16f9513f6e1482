"""Runtime settings for the estimation CLI and experiment runner."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

from dotenv import find_dotenv, load_dotenv

from .errors import ConfigurationError

_LOG_LEVELS = ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG")


@dataclass(frozen=True)
class Settings:
    workers: int
    log_level: str
    report_dir: Optional[Path]
    default_seed: int

    @staticmethod
    def _int_env(name: str, default: int) -> int:
        value = os.getenv(name)
        if value is None or not value.strip():
            return default
        try:
            return int(value.strip())
        except ValueError as exc:
            raise ConfigurationError("invalid_environment", detail=f"{name} must be an integer") from exc

    @classmethod
    def load(cls) -> "Settings":
        _load_env_file()
        workers = cls._int_env("CMGFA_WORKERS", 1)
        if workers < 1:
            raise ConfigurationError("invalid_environment", detail="CMGFA_WORKERS must be >= 1")

        log_level = (os.getenv("CMGFA_LOG_LEVEL") or "INFO").strip().upper()
        if log_level not in _LOG_LEVELS:
            raise ConfigurationError("invalid_environment", detail=f"CMGFA_LOG_LEVEL={log_level}")

        raw_dir = os.getenv("CMGFA_REPORT_DIR")
        report_dir = Path(raw_dir.strip()) if raw_dir and raw_dir.strip() else None

        seed = cls._int_env("CMGFA_SEED", 2024)
        if seed < 0:
            raise ConfigurationError("invalid_environment", detail="CMGFA_SEED must be >= 0")

        return cls(workers=workers, log_level=log_level, report_dir=report_dir, default_seed=seed)

    @property
    def logging_level(self) -> int:
        return getattr(logging, self.log_level)


_env_loaded = False


def _load_env_file() -> None:
    """Read the nearest ``.env`` at or above the working directory; real variables win."""
    global _env_loaded
    if not _env_loaded:
        load_dotenv(find_dotenv(usecwd=True), override=False)
        _env_loaded = True


@lru_cache()
def get_settings() -> Settings:
    return Settings.load()


def reset_settings_state() -> None:
    """Forget cached settings and re-read ``.env`` on the next load (for tests)."""
    global _env_loaded
    _env_loaded = False
    get_settings.cache_clear()


__all__ = ["Settings", "get_settings", "reset_settings_state"]
