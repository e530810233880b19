"""Exception types shared across the package."""


class PdeSurrogateError(Exception):
    """Base class for all package errors."""


class GridMismatch(PdeSurrogateError):
    """Two fields (or a field and an operator) live on different grids."""


class ShapeMismatch(PdeSurrogateError):
    """Tensor/layer shapes do not compose."""


class DegenerateCoefficient(PdeSurrogateError):
    """A coefficient entry is non-positive where positivity is required."""


class NotConverged(PdeSurrogateError):
    """An iterative solver hit its iteration cap.

    The best iterate found so far is attached as ``best`` (solver specific:
    a vector, an eigenpair, or a state object) together with the last
    residual norm.
    """

    def __init__(self, message, best=None, residual_norm=None):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm


class SingularJacobian(PdeSurrogateError):
    """The bordered Newton system could not be factorized."""


class ZeroVariance(PdeSurrogateError):
    """A whitening dimension is constant across the training set."""


class ZeroTargetNorm(PdeSurrogateError):
    """Relative error is undefined for an all-zero target vector."""


class InvalidNoiseLevel(PdeSurrogateError):
    """Relative noise level outside the range where the step bound is positive."""


class GenerationFailed(PdeSurrogateError):
    """One or more dataset samples failed to solve; indices attached."""

    def __init__(self, message, failed_indices):
        super().__init__(message)
        self.failed_indices = list(failed_indices)


class ConfigError(PdeSurrogateError):
    """A run configuration is malformed or references missing paths."""
