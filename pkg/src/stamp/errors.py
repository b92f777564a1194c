"""Exception types raised across the package."""


class StampError(Exception):
    """Base class for all package errors."""


class UnknownLabel(StampError, ValueError):
    def __init__(self, label, context=None):
        self.label = label
        self.context = context
        msg = f"unknown shot label {label!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class InvalidZone(StampError, ValueError):
    def __init__(self, zone, context=None):
        self.zone = zone
        self.context = context
        msg = f"zone id {zone!r} outside 1..13"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class InvalidEvent(StampError, ValueError):
    pass


class ExposureError(StampError, ValueError):
    """Nonzero counts in a team-season without positive exposure."""


class InvalidConfig(StampError, ValueError):
    pass


class SingularCorrelation(StampError, ValueError):
    pass


class DomainError(StampError, ValueError):
    pass


class OverflowGuard(StampError, FloatingPointError):
    pass


class NonConvergence(StampError, RuntimeError):
    def __init__(self, message, grad_norm=None):
        self.grad_norm = grad_norm
        super().__init__(message)


class FactorizationFailure(StampError, ArithmeticError):
    pass


class OptimizerFailure(StampError, RuntimeError):
    pass


class MissingSamples(StampError, ValueError):
    pass


class MismatchedIds(StampError, ValueError):
    pass


class EmptyData(StampError, ValueError):
    pass


class ComponentMissing(StampError, ValueError):
    pass


class EffectiveSampleSizeTooLow(StampError, RuntimeError):
    def __init__(self, message, ess=None):
        self.ess = ess
        super().__init__(message)


class NotConverged(StampError, RuntimeError):
    def __init__(self, message, rhat=None):
        self.rhat = rhat
        super().__init__(message)


class DegenerateCPO(UserWarning):
    """Harmonic-mean CPO hit densities that underflow in double precision."""
