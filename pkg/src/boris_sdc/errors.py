"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid or inconsistent input parameters."""


class UnsupportedRegimeError(ParameterError):
    """Physically unstable or otherwise unsupported parameter regime."""


class DivergenceError(RuntimeError):
    """Time integration produced non-finite state.

    Carries the index of the offending step and, when available, the
    partial run record accumulated up to that point.
    """

    def __init__(self, step, message=None, record=None):
        super().__init__(message or f"non-finite state at step {step}")
        self.step = step
        self.record = record


class NumericalError(RuntimeError):
    """Dense solve or eigenvalue computation failed."""
