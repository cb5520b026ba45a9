# Process-wide settings, read from the environment (and a local .env file if there is one).
import os
from dataclasses import dataclass
from functools import lru_cache

from dotenv import load_dotenv

from algebra.errors import ConfigurationError
from algebra.tracial import DEFAULT_ATOL

BACKENDS = ("reference", "picard")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class Settings:
    log_level: str = "WARNING"
    backend: str = "reference"
    atol: float = DEFAULT_ATOL  # projection systems and generators
    integrated_tol: float = 1e-7  # identities measured along integrated solutions
    algebraic_tol: float = 1e-10  # identities at a single time


def _float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = float(raw)
    except ValueError:
        raise ConfigurationError(f"{name} must be a number, got {raw!r}") from None
    if not value > 0:
        raise ConfigurationError(f"{name} must be positive, got {raw!r}")
    return value


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    load_dotenv()

    log_level = os.getenv("PROPAGATOR_LOG_LEVEL", "WARNING").strip().upper()
    if log_level not in LOG_LEVELS:
        raise ConfigurationError(f"PROPAGATOR_LOG_LEVEL must be one of {LOG_LEVELS}, got {log_level!r}")

    backend = os.getenv("PROPAGATOR_BACKEND", "reference").strip().lower()
    if backend not in BACKENDS:
        raise ConfigurationError(f"PROPAGATOR_BACKEND must be one of {BACKENDS}, got {backend!r}")

    return Settings(
        log_level=log_level,
        backend=backend,
        atol=_float("PROPAGATOR_ATOL", DEFAULT_ATOL),
        integrated_tol=_float("PROPAGATOR_INTEGRATED_TOL", 1e-7),
        algebraic_tol=_float("PROPAGATOR_ALGEBRAIC_TOL", 1e-10),
    )
