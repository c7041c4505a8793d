"""Exception hierarchy shared across the package."""


class FogprError(Exception):
    """Base class for all package errors."""


class InputError(FogprError, ValueError):
    """Shapes or values of arguments are inconsistent."""


class NumericalHealthError(FogprError, ArithmeticError):
    """A computed quantity left its admissible range (negative variance, NaN, ...)."""


class DegenerateInputError(InputError):
    """Geometry is too degenerate for the requested feature."""


class EquilibriumError(FogprError, RuntimeError):
    """The quasi-static solver did not reach the gradient tolerance."""

    def __init__(self, message, residual=float("nan"), step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class ConfigError(FogprError, ValueError):
    """Invalid experiment or task configuration."""
