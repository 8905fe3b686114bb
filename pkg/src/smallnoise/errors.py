"""Exception types raised by the estimation pipeline."""


class SmallNoiseError(Exception):
    """Base class for all package errors."""


class NonFiniteState(SmallNoiseError):
    """An integrated or simulated state left the finite range."""


class SingularCovariance(SmallNoiseError):
    """A covariance matrix failed Cholesky factorization after ridge repair."""


class NoConvergence(SmallNoiseError):
    """The optimizer hit its iteration cap from every start."""


class ZeroExposure(SmallNoiseError):
    """A jump-process exposure or event count was zero, so a rate MLE is undefined.

    ``estimates`` carries whichever rates could still be computed (NaN otherwise).
    """

    def __init__(self, message, estimates=None):
        super().__init__(message)
        self.estimates = estimates


class ConfigError(SmallNoiseError, ValueError):
    """Invalid user configuration or input data."""
