"""Exception types raised across the package."""


class SQHAError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SQHAError, ValueError):
    """Invalid grid, profile, model or run configuration."""


class GridMismatchError(SQHAError, ValueError):
    """Two fields that must share a grid do not."""


class SolverError(SQHAError, RuntimeError):
    """A time integrator refused to step or aborted mid-run."""


class NoiseModelError(SQHAError, ValueError):
    """Covariance kernel cannot be sampled or analysed on this grid."""


class EstimatorError(SQHAError, ValueError):
    """An ensemble estimator received unusable input."""


class AnalysisError(SQHAError, ValueError):
    """Tail fit or non-locality analysis failed."""
