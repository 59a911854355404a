"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class CllmixError(Exception):
    """Base class for all package errors."""


class UsageError(CllmixError, ValueError):
    """Invalid arguments, configuration, or parameter values."""


class DataError(CllmixError):
    """Malformed or missing input data (files, CSV cells, manifests)."""


class SchemaVersionError(DataError):
    """Result or manifest file written under an unsupported schema version."""


class NumericalError(CllmixError):
    """Non-finite likelihoods or other numerical breakdown."""
