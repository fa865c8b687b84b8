"""Exception hierarchy shared across the package."""


class CharCircError(Exception):
    """Base class for all errors raised by charcirc."""


class StructuralError(CharCircError, ValueError):
    """The circuit graph is malformed (dangling edge, cycle, unknown node)."""


class DimensionError(CharCircError, ValueError):
    pass


class ConfigError(CharCircError, ValueError):
    pass


class DataError(CharCircError, ValueError):
    pass


class NumericError(CharCircError, ArithmeticError):
    pass


class QuadratureUnderflowError(NumericError):
    """Numerical inversion produced a non-positive density.

    ``raw`` holds the offending quadrature value(s).
    """

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class MomentDoesNotExistError(CharCircError, ArithmeticError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class IncompatibleCircuitsError(CharCircError, ValueError):
    pass


class UnsupportedAnalyticError(CharCircError, TypeError):
    """Closed-form CFD is unavailable for a leaf family; use ``mc_cfd``."""


class InvalidParameterError(CharCircError, ValueError):
    """A leaf or node parameter violates its family's constraints."""


class QuadratureUnderflowWarning(RuntimeWarning):
    """Quadrature densities at or below zero were replaced by a floor value."""

    def __init__(self, message, count: int = 0):
        super().__init__(message)
        self.count = count
