"""Exception types raised across the package."""


class RDCError(Exception):
    """Base class for all package errors."""


class GridMismatch(RDCError, ValueError):
    pass


class EvaluationFault(RDCError, FloatingPointError):
    """A model callable returned non-finite values or left the state box."""

    def __init__(self, message, x=None, u=None):
        super().__init__(message)
        self.x = x
        self.u = u


class DivergenceFault(RDCError, FloatingPointError):
    def __init__(self, message, t=None, sup_norm=None):
        super().__init__(message)
        self.t = t
        self.sup_norm = sup_norm


class StepSizeFailure(RDCError, ArithmeticError):
    pass


class CommutatorToleranceExceeded(RDCError, ValueError):
    pass


class DomainFault(RDCError, ValueError):
    pass


class RouteMismatch(RDCError, ValueError):
    pass


class ConfigError(RDCError, ValueError):
    pass
