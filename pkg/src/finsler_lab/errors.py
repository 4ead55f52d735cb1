"""Exception hierarchy shared by every module."""


class FinslerError(Exception):
    """Base class for all library errors."""


class DomainError(FinslerError, ValueError):
    """A point or region lies outside the chart (or oracle) domain."""


class DegenerateVectorError(FinslerError, ValueError):
    """A tangent vector is too close to the zero section."""


class NonConvexMetricError(FinslerError):
    """The fundamental tensor lost positive-definiteness."""


class InversionError(FinslerError):
    """Newton inversion of the Legendre transform did not converge."""

    def __init__(self, message, covector=None):
        super().__init__(message)
        self.covector = covector


class HorizonError(FinslerError):
    """A geodesic left the chart before the requested time."""

    def __init__(self, message, t_exit):
        super().__init__(message)
        self.t_exit = t_exit


class ConditioningError(FinslerError):
    """A seed basis is numerically dependent on the given vector."""


class ImmersionError(FinslerError):
    """Tangent vectors of a submanifold are (nearly) linearly dependent."""
