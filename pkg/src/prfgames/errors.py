"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class UnsupportedOperationError(RuntimeError):
    """The operation is not defined for this metric, activation or size."""


class AbortedRunError(RuntimeError):
    """A dynamics run hit a non-finite value and cannot continue."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SamplingError(RuntimeError):
    """Rejection sampling ran out of attempts."""
