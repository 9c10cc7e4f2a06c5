"""Exception and warning types shared across the package."""


class ValidationError(ValueError):
    """Bad input: shape mismatch, broken invariant, malformed file."""


class NumericalError(RuntimeError):
    """A numerical procedure failed: non-convergence, instability, NaN."""


class ResonantModeWarning(UserWarning):
    """A mode sits exactly on the drive frequency (zero detuning)."""
