"""Shared exception types for the pipeline."""

from __future__ import annotations


class ConceptMinerError(Exception):
    """Base class for all pipeline errors."""


class FormatError(ConceptMinerError):
    """A malformed input file. Carries the offending line number when known."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConfigError(ConceptMinerError):
    """An invalid configuration value."""


class DataError(ConceptMinerError):
    """Inputs that violate an operation's contract."""


class TrainingDivergence(ConceptMinerError):
    """Training loss became non-finite. Carries the last finite total loss."""

    def __init__(self, message: str, last_loss: float | None = None):
        super().__init__(message)
        self.last_loss = last_loss


class SeedConflict(ConceptMinerError):
    """Two explicit seed sources disagree within one invocation."""
