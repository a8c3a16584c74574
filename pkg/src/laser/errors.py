"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class LaserError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LaserError, ValueError):
    """Array shapes do not chain or do not match a model."""


class ConfigError(LaserError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class NumericError(LaserError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message: str, *, location: str | None = None, epoch: int | None = None, breakdown=None):
        super().__init__(message)
        self.location = location
        self.epoch = epoch
        self.breakdown = breakdown


class CapabilityError(LaserError):
    """A dataset lacks a field (y, potential outcomes) that an operation needs."""


class DataFormatError(LaserError, ValueError):
    """A data file could not be parsed; carries the offending row/column."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class IngestionError(LaserError, OSError):
    """A covariate source file is missing or too small."""


class DegenerateError(LaserError, ValueError):
    """Input is degenerate for the requested fit (single class, empty arm)."""


class PreconditionError(LaserError, ValueError):
    """An argument violates a documented precondition."""


class UndefinedMetricError(LaserError, ZeroDivisionError):
    """The metric is undefined for the given inputs."""


class ConstructionError(LaserError, TypeError):
    """A computation graph was built from an unsupported operand or primitive."""
