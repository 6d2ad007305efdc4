"""Simulator for a single-ion information engine charging a motional-mode battery."""
from importlib.metadata import PackageNotFoundError, version

from .errors import (
    CalibrationOutOfRange,
    ConfigError,
    DomainError,
    LeakageExceeded,
    NonPhysicalState,
    StepSizeTooCoarse,
)

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

__all__ = [
    "CalibrationOutOfRange",
    "ConfigError",
    "DomainError",
    "LeakageExceeded",
    "NonPhysicalState",
    "StepSizeTooCoarse",
    "__version__",
]
