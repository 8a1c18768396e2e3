"""Exception types shared across the package."""


class QbviError(Exception):
    """Base class for all package errors."""


class NotSPD(QbviError):
    """A matrix expected to be symmetric positive definite is not."""


class NotPositive(QbviError):
    """A vector expected to be strictly positive has a nonpositive entry."""


class Singular(QbviError):
    """A linear solve against a singular matrix was attempted."""


class NonFiniteLoglik(QbviError):
    """A log-likelihood query returned NaN or +-inf.

    Carries the offending parameter draw in ``theta`` for diagnosis.
    """

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class NonFiniteLogPost(QbviError):
    """The log posterior is not finite at the sampler's initial point."""


class InsufficientSamples(QbviError):
    """Too few retained samples for the requested estimate."""


class DomainError(QbviError):
    """Scalar argument outside the distribution's support."""


class DimMismatch(QbviError):
    """Incompatible shapes between parameters and data."""


class TooShort(QbviError):
    """Time series too short for the requested construction."""


class ParseError(QbviError):
    """Malformed input file; message carries row/column location."""


class ConfigError(QbviError):
    """Invalid or inconsistent training configuration."""
