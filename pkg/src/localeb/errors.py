"""Exception hierarchy shared across the package.

Data problems (bad files, violated invariants, not enough observations)
are kept distinct from runtime failures so the CLI can map them to
separate exit codes.
"""


class LocalEbError(Exception):
    """Base class for all package-specific errors."""


class ParseError(LocalEbError):
    """A snapshot file could not be parsed. Carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(LocalEbError):
    """Structurally parseable data violating a series invariant."""


class InsufficientDataError(LocalEbError):
    """An operation needs more observations than the input provides."""


class DegenerateSeriesError(LocalEbError):
    """A series carries no arrival mass and has no usable shape."""
