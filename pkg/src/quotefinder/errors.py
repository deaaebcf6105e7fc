"""Shared exception types."""


class QuoteFinderError(Exception):
    """Base class for all operational errors raised by this package."""


class IngestionError(QuoteFinderError):
    """Malformed input file (names the offending line)."""


class ValidationError(QuoteFinderError):
    """Structurally valid input that violates a corpus invariant."""


class SplitViolationError(QuoteFinderError):
    """An article's quotes would land in more than one dataset split."""
