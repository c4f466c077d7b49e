"""Exception types shared across the package."""


class MgcpError(Exception):
    """Base class for errors raised by this package."""


class NumericalError(MgcpError):
    """A linear-algebra operation failed (e.g. Cholesky after jitter escalation)."""


class DegenerateDataError(MgcpError):
    """Observations are unusable for fitting (zero variance, too few points)."""


class DataFormatError(MgcpError):
    """A data or model file could not be parsed."""


class FitError(MgcpError):
    """Optimization failed to produce any usable result."""


class SizeError(MgcpError):
    """A problem size guard was exceeded."""
