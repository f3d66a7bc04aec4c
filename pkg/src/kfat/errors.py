"""Exception hierarchy.

Errors split into two families so the CLI can map them to exit codes:
``DataError`` (bad files, configs, ranges) and ``NumericalError``
(integration blow-ups, surrogate fit failures).
"""

from __future__ import annotations


class KfatError(Exception):
    """Base class for all package errors."""


class DataError(KfatError):
    """Invalid input data or configuration."""


class NumericalError(KfatError):
    """A numerical procedure failed to produce a finite result."""


class ConfigError(DataError):
    pass


class ParseError(DataError):
    """Malformed manoeuvre file. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class InvariantError(DataError):
    """A domain invariant was violated (e.g. non-uniform sample spacing)."""


class LowSpeedError(DataError):
    """Longitudinal speed too low for slip/sideslip kinematics."""


class RangeError(DataError, ValueError):
    """A point lies outside the search box."""


class ShrinkError(DataError):
    """Shrinking the search box produced a zero-width dimension."""


class IntegrationError(NumericalError):
    """Vehicle dynamics produced a non-finite state."""


class GenerationError(NumericalError):
    """Ground-truth simulation failed while generating a manoeuvre."""


class FitError(NumericalError):
    """Surrogate hyperparameter training failed."""


class TuningError(KfatError):
    """Objective failure during tuning; carries the trace collected so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
