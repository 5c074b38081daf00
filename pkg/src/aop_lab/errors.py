"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
ScorerError (and subclasses) -> 3.
"""


class AopLabError(Exception):
    pass


class UsageError(AopLabError):
    """Bad invocation or invalid configuration."""


class DataError(AopLabError):
    """Malformed or inconsistent input data."""


class ScorerError(AopLabError):
    """Failure in a scorer or the scorer wire protocol."""


class ScorerTimeout(ScorerError):
    pass


class ProtocolError(ScorerError):
    """Malformed wire-protocol message."""


class RecordInvariantError(ScorerError):
    """A score record violates its structural invariants."""


class SpanAlignmentError(ScorerError):
    """A requested span cuts through a scorer token."""
