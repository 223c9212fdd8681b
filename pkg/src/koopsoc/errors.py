"""Exception hierarchy shared by the library and the CLI."""


class KoopsocError(Exception):
    """Base class for all package errors."""


class ConfigError(KoopsocError):
    """Invalid model or experiment configuration (CLI exit code 2)."""


class NumericalError(KoopsocError):
    """A numerical routine broke down (CLI exit code 3)."""


class SamplingError(NumericalError):
    """Rejection sampling exceeded its attempt cap."""


class FilterError(NumericalError):
    """Innovation solve or covariance factorization failed."""


class LiftError(NumericalError):
    """Cholesky lifting or its inverse received an invalid argument."""


class DareError(NumericalError):
    """Riccati iteration failed to converge or received invalid weights."""

    def __init__(self, message, increment=None, iterations=None):
        super().__init__(message)
        self.increment = increment
        self.iterations = iterations


class UnstableClosedLoopError(NumericalError):
    """Synthesized gain does not stabilize the design model."""
