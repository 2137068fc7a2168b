"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TutorlensError(Exception):
    """Base class for all package errors."""


class ConfigError(TutorlensError):
    """Invalid or missing configuration."""


class ValidationError(TutorlensError):
    """One or more validation violations; carries the full list."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


class InvalidLabelError(TutorlensError):
    """A label references a fine type unknown to the active taxonomy."""


class NoDominantCategoryError(TutorlensError):
    """Dominance is undefined for an all-zero distribution."""


class InvalidIdError(TutorlensError):
    """Raw identifier unusable (e.g. empty) for pseudonymization."""


class CorpusCorruptError(TutorlensError):
    """More than half of a transcript stream failed to parse."""


class DuplicateRecordError(TutorlensError):
    """Append rejected: a record with this id already exists."""


class NotFoundError(TutorlensError):
    """Requested record does not exist."""


class ForbiddenError(TutorlensError):
    """Caller's role or identity does not permit the operation."""


class UnsupportedOperationError(TutorlensError):
    """Operation conflicts with an append-only or immutability invariant."""


class StorageError(TutorlensError):
    """Underlying log file unreadable or corrupt beyond recovery."""
