"""
Exception hierarchy for the MiLa experiment package.

Every module raises a subclass of MilaError so the CLI can map failures to
exit codes without catching unrelated exceptions.
"""

from typing import Optional


class MilaError(Exception):
    """Base class for all package errors."""


class ConfigError(MilaError):
    """Invalid or overconstrained experiment configuration."""


class DimensionError(MilaError, ValueError):
    """Array shapes do not chain, or a tape no longer matches its parameters."""


class NonFiniteGradientError(MilaError):
    """A gradient handed to the optimizer contains NaN or inf."""

    def __init__(self, message: str, layer: Optional[str] = None):
        super().__init__(message)
        self.layer = layer


class FiniteDifferenceError(MilaError):
    """The loss evaluated to a non-finite value during finite differencing."""

    def __init__(self, message: str, coordinate: Optional[int] = None):
        super().__init__(message)
        self.coordinate = coordinate


class DomainError(MilaError, ValueError):
    """Argument outside the domain of a mathematical operation."""


class FitError(MilaError):
    """A regression or mixture fit could not be completed."""


class InstabilityError(MilaError):
    """Numerical blow-up during integration."""

    def __init__(self, message: str, dt: Optional[float] = None):
        super().__init__(message)
        self.dt = dt


class NonFiniteStateError(MilaError):
    """A measured robot state is NaN or inf."""


class SegmentationAccessError(MilaError):
    """Hidden subtask segmentation was read inside a guarded code path."""


class AdaptationError(MilaError):
    """Inner-loop adaptation produced a non-finite loss or parameters."""


class MetaStepError(MilaError):
    """Every task of a meta-batch was skipped."""


class ArtifactError(MilaError):
    """A required input artifact is missing or malformed."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path
