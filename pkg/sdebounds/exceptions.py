"""Custom exceptions for sdebounds."""

from typing import Any, Optional


class SdeBoundsError(Exception):
    """Base exception for all sdebounds errors."""

    pass


class ConfigurationError(SdeBoundsError):
    """Raised when there's a configuration issue."""

    pass


class DomainError(SdeBoundsError, ValueError):
    """Raised when an argument lies outside the domain of an operation."""

    pass


class ToleranceNotMet(SdeBoundsError):
    """Raised when adaptive quadrature exhausts its subdivision budget.

    The best available estimate is kept on ``result`` so callers can decide
    whether the honest error estimate is good enough for them.
    """

    def __init__(self, message: str, result: Any = None):
        super().__init__(message)
        self.result = result


class NonFiniteState(SdeBoundsError):
    """Raised when a simulated path leaves the finite reals."""

    pass


class LookaheadError(SdeBoundsError):
    """Raised when a drift asks for path values beyond the current grid time."""

    pass


class EmptySample(SdeBoundsError):
    """Raised when a density estimate is requested from zero samples."""

    pass


class AttainmentFailed(SdeBoundsError):
    """Raised when a worst-case drift does not touch its bound."""

    def __init__(self, message: str, gap: Optional[float] = None):
        super().__init__(message)
        self.gap = gap


class GridTooNarrow(SdeBoundsError):
    """Raised when the control grid lets too much Gaussian mass escape."""

    pass


class DriftParsingError(SdeBoundsError):
    """Raised when a drift expression or drift suite cannot be parsed."""

    pass


class LampertiError(SdeBoundsError):
    """Raised when a diffusion coefficient violates the Lamperti model assumptions."""

    pass
