"""Exception hierarchy shared by all modules."""


class QarbError(Exception):
    """Base class for library errors."""


class ZeroDenominator(QarbError, ZeroDivisionError):
    pass


class ZeroVelocity(QarbError, ValueError):
    pass


class ZeroNominalVector(QarbError, ValueError):
    pass


class EvaluationFailure(QarbError, RuntimeError):
    pass


class InsufficientPaths(QarbError, ValueError):
    pass


class OutOfDomain(QarbError, ValueError):
    pass


class NotConverged(QarbError, RuntimeError):
    """Quadrature did not reach its tolerance.  Carries the best estimate."""

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class UnsupportedDimension(QarbError, ValueError):
    pass


class DomainError(QarbError, ValueError):
    pass


class TruncationTooSmall(QarbError, ValueError):
    pass


class MissingEigenvalue(QarbError, KeyError):
    pass


class DimensionMismatch(QarbError, ValueError):
    pass


class NegativeWeight(QarbError, ValueError):
    pass


class PayoffOverflow(QarbError, OverflowError):
    pass


class InconsistentSpec(QarbError, ValueError):
    pass


class SingularDiffusion(QarbError, ValueError):
    pass


class DegenerateMetric(QarbError, ValueError):
    pass


class ConfigError(QarbError, ValueError):
    """Invalid run configuration; the message names the offending key."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class NonOrthogonalTruncation(QarbError, ValueError):
    """Index set whose plane waves are not mutually orthogonal."""


class EmptyBin(QarbError, ValueError):
    pass


class NotSelfFinancing(UserWarning):
    """Warning channel for paths that violate x'.D = 0 beyond tolerance."""


class OutOfDomainWarning(UserWarning):
    pass
