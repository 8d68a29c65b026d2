"""Exception types raised across the package."""

from __future__ import annotations


class OverlapABError(Exception):
    """Base class for package errors."""


class StepRangeError(OverlapABError, IndexError):
    """A prefix length outside ``1..T`` was requested."""


class SupportError(OverlapABError):
    """A propensity model assigns zero probability to a logged step."""


class InsufficientDataError(OverlapABError):
    """An arm has too few users for the requested computation."""


class IntervalUnavailableError(OverlapABError):
    """A confidence interval was requested but the variance is undefined."""


class LogParseError(OverlapABError):
    """A trajectory log line could not be decoded."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class IntegrityError(OverlapABError):
    """Log records are individually valid but inconsistent with each other."""


class CalibrationError(OverlapABError):
    """A policy pair could not be tuned to the requested distance."""


class ConfigError(OverlapABError):
    """An experiment or simulation config is invalid."""
