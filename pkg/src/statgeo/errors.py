"""Exception hierarchy shared by all statgeo modules."""


class StatGeoError(Exception):
    """Base class for all library errors."""


class DomainError(StatGeoError):
    """Observation lies outside the support of the likelihood."""


class InvalidParam(StatGeoError):
    """Parameter vector violates the family's constraints."""


class FamilyMismatch(StatGeoError):
    """Operation combined parameter points from different families."""


class ShapeError(StatGeoError):
    """Array dimensions do not chain consistently."""


class InvalidK(StatGeoError):
    """Requested more clusters than distinct points."""


class NoRegularization(StatGeoError):
    """Decoder has no uncertainty regularization attached."""


class OffSimplex(StatGeoError):
    """Free simplex coordinates are not positive with sum < 1."""


class InvalidEpsilon(StatGeoError):
    """Perturbation step must be strictly positive."""


class SingularMetric(StatGeoError):
    """Metric tensor could not be factorized at the queried point."""


class NonFiniteEnergy(StatGeoError):
    """Curve energy evaluated to NaN/inf; carries the offending t."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class OutOfRange(StatGeoError):
    """Curve parameter t is outside [0, 1]."""


class DegenerateEstimate(StatGeoError):
    """Monte Carlo estimator collapsed (effective sample size too small)."""


class NonConvergence(StatGeoError):
    """Optimizer hit the iteration cap; carries the last iterate."""

    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last
