"""Exception types raised across the package."""


class TrajoodError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(TrajoodError, ValueError):
    pass


class TensorFormatError(TrajoodError):
    """Malformed tensor container; ``offset`` is the byte where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegenerateTimestepError(TrajoodError, ValueError):
    pass


class ContractError(TrajoodError):
    """A pluggable component returned output that breaks its interface."""


class PredictionLookupError(TrajoodError, LookupError):
    def __init__(self, sample_id, t):
        super().__init__(f"no stored prediction for sample {sample_id!r} at t={t}")
        self.sample_id = sample_id
        self.t = t


class DivergenceError(TrajoodError, FloatingPointError):
    pass


class InsufficientTrajectoryError(TrajoodError, ValueError):
    pass


class ComponentCollapseError(TrajoodError):
    def __init__(self, component, weight):
        super().__init__(f"mixture component {component} collapsed (weight={weight:.3g})")
        self.component = component
        self.weight = weight


class EmMonotonicityError(TrajoodError):
    pass


class GridExhaustedError(TrajoodError):
    pass


class ConfigError(TrajoodError, ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
