"""Exception types shared across the package."""


class MVParametrixError(Exception):
    """Base class for all package errors."""


class ModelValidationError(MVParametrixError):
    """A model fails the admissibility audit (ellipticity or bound checks)."""


class InvalidPerturbationError(MVParametrixError):
    """A push-forward map produced non-finite coordinates."""


class DivergenceError(MVParametrixError):
    """A simulated path left the finite range (explosion)."""

    def __init__(self, step: int, time: float):
        self.step = step
        self.time = time
        super().__init__(f"non-finite state at step {step} (t={time:g})")


class PairingError(MVParametrixError):
    """A variation run was paired with a base run from a different seed."""


class CoverageError(MVParametrixError):
    """The quadrature box misses too much Gaussian tail mass."""


class ConditioningError(MVParametrixError):
    """A diffusion matrix is numerically singular."""


class CloudSizeError(MVParametrixError):
    """A cloud is too large for the requested exact computation."""


class ConfigError(MVParametrixError):
    """A run configuration is missing, malformed, or out of range."""
