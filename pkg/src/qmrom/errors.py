"""Exception types raised across the package."""


class ReductionError(Exception):
    """Base class for all errors raised by qmrom."""


class ConfigError(ReductionError, ValueError):
    """Invalid experiment/model configuration."""


class NumericalError(ReductionError, ArithmeticError):
    """A numerical procedure failed (singular system, divergence, ...)."""


class SingularMatrixError(NumericalError):
    """A matrix that must be factorized is singular or not positive definite."""


class ConvergenceError(NumericalError):
    """Newton-Raphson iterations did not converge within the allowed count."""

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual
