"""Exception hierarchy shared across the package.

Every error raised on purpose derives from HeightbinsError so the CLI can
map failures onto its exit codes without string matching.
"""

__all__ = [
    "HeightbinsError",
    "ContractViolation",
    "DomainError",
    "ConfigError",
    "DataError",
    "RasterParseError",
    "NumericError",
    "GradCheckError",
]


class HeightbinsError(Exception):
    """Base class for all package errors."""


class ContractViolation(HeightbinsError):
    """An argument violated a documented shape or value contract."""


class DomainError(HeightbinsError):
    """A numeric input fell outside the mathematical domain of an op."""


class ConfigError(HeightbinsError):
    """A run configuration failed validation."""


class DataError(HeightbinsError):
    """A dataset, manifest, or raster file could not be used."""


class RasterParseError(DataError):
    """A raster byte stream is malformed.

    Attributes:
        offset: byte offset at which parsing failed, or None if unknown.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(HeightbinsError):
    """A computation produced non-finite values and was aborted."""


class GradCheckError(HeightbinsError):
    """A finite-difference gradient check exceeded tolerance."""
