"""
Exception hierarchy shared by the services and the command line.

Configuration problems map to exit code 2, numerical failures to exit code 3.
"""

from typing import Optional


class NeurofieldError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigurationError(NeurofieldError, ValueError):
    """Raised when a configuration document cannot be loaded or validated."""


class AssumptionViolation(ConfigurationError):
    """
    Raised when a model violates one of the regularity assumptions.

    Attributes:
        assumption: Short label of the violated assumption, e.g. ``"(5)"``
    """

    def __init__(self, assumption: str, message: str):
        self.assumption = assumption
        super().__init__(f"assumption {assumption}: {message}")


class NumericalFailure(NeurofieldError, RuntimeError):
    """Raised when a computation cannot produce a finite, valid result."""


class BlowUpError(NumericalFailure):
    """Raised when a simulated state leaves the finite range."""

    def __init__(self, step: int, neuron: int, value: float):
        self.step = step
        self.neuron = neuron
        self.value = value
        super().__init__(
            f"state blow-up at step {step} (neuron {neuron}, value {value!r})"
        )


class CholeskyFailure(NumericalFailure):
    """Raised when a covariance matrix stays indefinite after maximal jitter."""

    def __init__(self, max_jitter: float, detail: Optional[str] = None):
        self.max_jitter = max_jitter
        message = f"Cholesky factorization failed after jitter {max_jitter:g}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)
