"""Exception hierarchy shared across the package."""


class LinregimeError(Exception):
    """Base class for all errors raised by this package."""


class DataError(LinregimeError, ValueError):
    """Input data violates the dataset contract (shape, coding, finiteness)."""


class ConvergenceError(LinregimeError, RuntimeError):
    """An iterative fit failed to converge within its iteration budget."""


class SeparationError(LinregimeError, RuntimeError):
    """Perfect separation detected while fitting the propensity model."""


class SearchError(LinregimeError, RuntimeError):
    """Policy search could not be run on the given inputs."""


class BootstrapError(LinregimeError, RuntimeError):
    """Resampling failed (degenerate resamples or corrupted objective)."""
