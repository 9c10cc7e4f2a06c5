"""Heating-robust pulse synthesis and verification for two-ion MS gates."""

from .errors import NumericalError, ResonantModeWarning, ValidationError

__all__ = ["NumericalError", "ResonantModeWarning", "ValidationError"]
__version__ = "0.1.0"
