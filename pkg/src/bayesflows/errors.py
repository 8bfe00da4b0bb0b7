"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`BayesFlowError`, so callers (and the CLI) can separate numerical
failures from configuration problems.
"""


class BayesFlowError(Exception):
    """Base class for all package errors."""


class NumericError(BayesFlowError, ArithmeticError):
    """A numerical procedure failed or produced non-finite values."""


class SingularMetricError(NumericError):
    pass


class NumericDomainError(NumericError):
    pass


class StabilityError(NumericError):
    pass


class SchemeError(NumericError):
    pass


class ConvergenceError(NumericError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class OptimizationError(ConvergenceError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, index=None, position=None):
        super().__init__(message)
        self.index = index
        self.position = position


class InputError(BayesFlowError, ValueError):
    """Invalid arguments."""


class InvalidDomainError(InputError):
    pass


class GridMismatchError(InputError):
    pass


class UnsupportedDimensionError(InputError):
    pass


class FitError(InputError):
    pass


class InsufficientSampleError(InputError):
    pass


class OutOfDomainError(InputError):
    pass


class AssemblyError(InputError):
    pass


class SingularPriorError(InputError):
    pass


class ConfigError(InputError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
