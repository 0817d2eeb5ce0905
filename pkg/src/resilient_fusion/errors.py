"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: usage problems exit 1,
data/IO problems exit 2, numeric failures exit 3.
"""


class DataError(Exception):
    """Missing, malformed, or degenerate input data."""


class DegenerateGeometryError(DataError):
    """Point sets too degenerate for a rigid alignment (collinear, < 3 points)."""


class StreamOrderError(DataError):
    """Timestamps in a stream went backwards beyond the allowed tolerance."""


class NumericError(Exception):
    """A solver failed to converge or produced an unusable result."""
