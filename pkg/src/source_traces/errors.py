"""Exception types shared across the package."""


class SourceTracesError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SourceTracesError, ValueError):
    pass


class SingularSystem(SourceTracesError, ArithmeticError):
    pass


class InvalidMrp(SourceTracesError, ValueError):
    pass


class GenerationFailure(SourceTracesError, RuntimeError):
    pass


class InvalidStep(SourceTracesError, ValueError):
    """A schedule was evaluated at a zero step or zero visit count."""


class EmptyMemory(SourceTracesError, LookupError):
    pass


class EmptyGrid(SourceTracesError, LookupError):
    pass


class Divergence(SourceTracesError, FloatingPointError):
    """Value estimate left the divergence bound (``|v|_inf > 1e6``)."""

    def __init__(self, step, magnitude):
        super().__init__(f"diverged at step {step}: |v|_inf = {magnitude:.3g}")
        self.step = step
        self.magnitude = magnitude


class ConfigError(SourceTracesError, ValueError):
    """Malformed experiment config or invalid combination of options."""
