"""Exception types raised across the package."""


class IpmanError(Exception):
    """Base class for package errors."""


class ShapeError(IpmanError, ValueError):
    """Array dimensions do not agree."""


class StateError(IpmanError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class ConfigError(IpmanError, ValueError):
    """Invalid configuration, or a configuration that cannot be satisfied."""


class DomainError(IpmanError, ValueError):
    """Input outside the domain of a function (e.g. negative dose)."""


class TrainingError(IpmanError, RuntimeError):
    """Training diverged.

    Attributes:
        iteration: iteration index at which the failure was detected.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration


class CertificateError(IpmanError, RuntimeError):
    """No valid epsilon-certificate could be built."""


class DependencyError(IpmanError, FileNotFoundError):
    """A pipeline stage is missing an upstream artifact."""


class StageError(IpmanError, RuntimeError):
    """Wraps an error raised inside a pipeline stage, tagging the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
