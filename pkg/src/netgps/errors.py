"""Exception types shared across the package."""


class NetgpsError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(NetgpsError):
    """Inputs violate a documented precondition (shapes, ranges, labels)."""


class ParseError(NetgpsError):
    """A file could not be parsed; message carries path and line number."""


class SingularDesignError(NetgpsError):
    """Design matrix is rank deficient beyond repair."""


class DegenerateBasisError(NetgpsError):
    """Spline basis construction failed (no usable eigenvalues / knots)."""


class SamplerError(NetgpsError):
    """MCMC produced non-finite state; message carries the iteration index."""


class StudyError(NetgpsError):
    """Too many simulation replicates failed to produce estimates."""
