"""Exception types shared across the package."""


class PrepalError(Exception):
    """Base class for errors raised by this package."""


class FormatError(PrepalError, ValueError):
    """A file does not conform to the expected on-disk layout."""


class SizeMismatchError(FormatError):
    """Header-declared payload size disagrees with the actual byte count."""


class ValidationError(PrepalError, ValueError):
    """Input data or configuration violates a documented contract.

    The message names the offending field or index so callers can
    surface it directly.
    """


class NumericalFailureError(PrepalError, RuntimeError):
    """Training produced a non-finite loss. Carries the epoch it happened at."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class UnsupportedModelError(PrepalError, TypeError):
    """An operation was asked for a model family it is not defined on."""


class IncompatibleBackbonesError(PrepalError, ValueError):
    """Two representation matrices cannot be used interchangeably."""
