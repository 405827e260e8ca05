"""Exception types shared across the package."""


class DataError(Exception):
    """Raised for malformed or inconsistent on-disk data (manifests, event
    files, descriptor files, config files)."""


class NumericalError(Exception):
    """Raised when a computation produces non-finite values (e.g. NaN loss)."""
