"""Exception hierarchy shared by all omflow modules."""


class OmflowError(Exception):
    """Base class for all omflow errors."""


class OutOfDomain(OmflowError):
    """A point (t, x) left the declared time span or chart box."""


class NotPositiveDefinite(OmflowError):
    """Metric evaluation produced an eigenvalue <= 0."""


class SingularMetric(OmflowError):
    """Metric matrix could not be inverted."""


class NotOrthonormal(OmflowError):
    """Initial frame fails the orthonormality check."""


class NoConvergence(OmflowError):
    """An iterative solver exhausted its iteration budget."""


class StepFailure(OmflowError):
    """An ODE integration step produced non-finite values."""


class NonPositiveWeight(OmflowError):
    """Weight function dipped below its positivity floor."""


class DegenerateRatio(OmflowError):
    """Ratio experiment denominator had zero hits."""


class UnsupportedDimension(OmflowError):
    """Dimension outside the supported range."""


class ConfigError(OmflowError):
    """Malformed experiment configuration."""
