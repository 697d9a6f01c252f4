"""Exception types shared across the package."""


class RadiomapError(Exception):
    """Base class for errors raised by this package."""


class DataError(RadiomapError, ValueError):
    """Malformed, out-of-range, or insufficient input data."""


class SolverError(RadiomapError, RuntimeError):
    """A numerical solve failed or did not converge."""
