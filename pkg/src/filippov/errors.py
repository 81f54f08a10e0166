"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class FilippovError(Exception):
    """Base class for all errors raised by :mod:`filippov`."""


class EvaluationError(FilippovError):
    """A vector field or switching function returned non-finite values."""

    def __init__(self, field: str, x, value) -> None:
        self.field = field
        self.x = x
        self.value = value
        super().__init__(f"non-finite value from {field} at x={x!r}: {value!r}")


class DegenerateSlidingError(FilippovError):
    """The sliding coefficient has a vanishing denominator."""


class OffSurfaceError(FilippovError):
    """A surface operation was requested at a point off the switching surface."""


class IntegrationError(FilippovError):
    """The stepper could not make progress (step-size underflow)."""

    def __init__(self, message: str, t: float | None = None, x=None) -> None:
        self.t = t
        self.x = x
        super().__init__(message if t is None else f"{message} (t={t!r})")


class EventMissError(IntegrationError):
    """A sliding step left the sliding region without a located boundary event."""


class DegeneracyError(FilippovError):
    """A surface hit could not be classified."""


class GrazingNotFoundError(FilippovError):
    """No grazing point is found along the orbit."""


class NoBracketError(FilippovError):
    """Bisection endpoints carry indicators of equal sign (or the interval is empty)."""

    def __init__(self, message: str, lo=None, hi=None, f_lo=None, f_hi=None) -> None:
        self.lo, self.hi, self.f_lo, self.f_hi = lo, hi, f_lo, f_hi
        super().__init__(message)


class ConfigError(FilippovError):
    """Invalid run configuration."""
