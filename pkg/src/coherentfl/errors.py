"""Exception hierarchy shared across the package."""


class CoherentFLError(Exception):
    """Base class for all errors raised by coherentfl."""


class DomainError(CoherentFLError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class DimensionError(CoherentFLError, ValueError):
    """Array shapes are inconsistent or a size is invalid."""


class ConfigurationError(CoherentFLError, ValueError):
    """A frame, scheduling or experiment configuration cannot be realised."""


class SchedulingError(ConfigurationError):
    """The device pool cannot fill the requested cohort."""

    def __init__(self, message, device_class=None):
        super().__init__(message)
        self.device_class = device_class


class PowerConstraintError(CoherentFLError, ValueError):
    """Transmit powers exceed the average power budget."""

    def __init__(self, message, excess):
        super().__init__(message)
        self.excess = excess


class InfeasibleBudgetError(PowerConstraintError):
    """The optimal pilot power would be negative for this budget."""

    def __init__(self, message, excess, min_rho):
        super().__init__(message, excess)
        self.min_rho = min_rho


class LocalTrainingError(CoherentFLError, FloatingPointError):
    """Local SGD produced a non-finite gradient."""


class IdxParseError(CoherentFLError, ValueError):
    """Malformed IDX payload; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class IdxMagicError(IdxParseError):
    pass


class IdxTruncatedError(IdxParseError):
    pass


class IdxDimensionOverflowError(IdxParseError):
    pass


class IdxTrailingDataError(IdxParseError):
    pass
