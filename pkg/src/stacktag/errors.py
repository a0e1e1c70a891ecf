"""Exception taxonomy shared across the package.

Every error the library raises deliberately derives from StacktagError so
callers (and the CLI) can map failures to exit codes without string matching.
"""

from __future__ import annotations


class StacktagError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(StacktagError):
    """Invalid input: bad shapes, bad values, broken preconditions."""

    exit_code = 2


class FormatError(ValidationError):
    """A file does not follow its declared format (magic, version, kind)."""


class CorruptionError(ValidationError):
    """A file follows the format but its byte layout is inconsistent."""


class AlignmentError(ValidationError):
    """Components of one dataset disagree on sample count or order."""


class MetricUndefinedError(ValidationError):
    """A metric was requested on inputs where it has no defined value."""


class DivergenceError(StacktagError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
