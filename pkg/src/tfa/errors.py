"""Exception hierarchy shared across the package.

Every error class carries an ``exit_code`` so the command-line layer can map
failures onto its documented contract: 2 for configuration errors, 3 for
I/O and parse errors, 4 for semantic validation failures.
"""


class TfaError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(TfaError):
    """Invalid or inconsistent configuration value."""

    exit_code = 2


# ---- file format / parse problems (exit 3) ----


class FormatError(TfaError):
    """A file could not be parsed or is internally inconsistent."""

    exit_code = 3


class BadMagic(FormatError):
    """File does not start with the expected magic bytes."""


class DimMismatch(FormatError):
    """Declared shapes disagree with each other or with the actual payload."""


class CorruptRecord(FormatError):
    """A stored record is unusable (non-finite values, zero vector, bad field)."""


class DuplicateClassId(FormatError):
    """A prototype set declares the same class id twice."""


# ---- semantic validation (exit 4) ----


class ValidationError(TfaError):
    """Well-formed inputs that violate a protocol-level constraint."""

    exit_code = 4


class DisjointnessViolation(ValidationError):
    """Train label spaces of distinct tasks overlap, or a record's label falls
    outside its own task's label space."""


class ShotCountMismatch(ValidationError):
    """A novel task does not provide exactly the expected shots per class."""


class OutOfOrderSession(ValidationError):
    """Sessions must be executed in task order, starting at the base task."""


class EmptyTrainSet(ValidationError):
    """Alignment training requires at least one sample."""


class ShotCapacityExceeded(ValidationError):
    """More novel shots inserted for a class than the cache admits."""


# ---- computational preconditions ----


class ZeroVector(TfaError):
    """An operation that needs a direction received the zero vector."""


class EmptyInput(TfaError):
    """A reduction over an empty collection."""


class ZeroBaseAccuracy(TfaError):
    """Accuracy decline is undefined when the first session scores zero."""


class NoNovelSessions(TfaError):
    """Mean harmonic accuracy needs at least one session with novel classes."""
