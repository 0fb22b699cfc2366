"""Exception hierarchy shared by all qvd modules.

The CLI maps these onto its stable exit codes: bad arguments and
configuration problems exit 2, numerical degeneracies exit 3, and file
format / I/O failures exit 4.
"""

from __future__ import annotations


class QvdError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(QvdError, ValueError):
    """An operation was called with invalid arguments (shape mismatch,
    bad axis, out-of-range parameter, malformed config)."""


class DegenerateRangeError(QvdError):
    """A value range collapsed to a point where a spread is required
    (constant calibration group, zero global range)."""


class DegenerateInputError(QvdError):
    """Input data is degenerate for the requested metric
    (e.g. a zero-norm operand in a cosine similarity)."""


class SearchError(QvdError):
    """A calibration search could not run: empty candidate grid or
    degenerate search bounds."""


class TensorFormatError(QvdError):
    """A tensor file is malformed. Messages include the byte offset of
    the first offending field."""


class ReportSchemaError(QvdError):
    """A run report carries an unknown or conflicting schema version."""
