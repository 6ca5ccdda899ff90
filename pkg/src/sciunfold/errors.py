"""Exception types shared across the package."""


class SciUnfoldError(Exception):
    """Base class for all package errors."""


class ShapeError(SciUnfoldError, ValueError):
    """Array dimensions are inconsistent with what an operation requires."""


class ContractError(SciUnfoldError, ValueError):
    """An argument violates a documented precondition (range, sign, emptiness)."""


class DegenerateMaskError(ContractError):
    """A pixel is never exposed by any mask, so mask-normalized quantities are undefined."""


class UnsupportedPrimitiveError(SciUnfoldError, TypeError):
    """A traced value was used in an operation that has no backward rule."""


class ConfigError(SciUnfoldError, ValueError):
    """A config file or environment setting could not be parsed."""


class FileFormatError(SciUnfoldError, OSError):
    """A data file is malformed; the message names the offending path."""


class CheckpointMismatchError(SciUnfoldError, ValueError):
    """Checkpoint contents do not match the schedule or prior being restored."""
