"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numeric failures exit 4.
"""


class DetXplainError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(DetXplainError):
    """Bad run configuration: unknown method, incompatible detector, bad flag."""


class DataError(DetXplainError):
    """Broken dataset, unreadable file, malformed serialized payload."""


class NumericError(DetXplainError):
    """Internal numeric failure (non-finite values, impossible state)."""


class DegenerateInputError(DetXplainError):
    """Input carries no usable signal (e.g. constant values); caller decides fallback."""


class GenerationError(DataError):
    """Synthetic scene construction failed (e.g. nodule placement retries exhausted)."""
