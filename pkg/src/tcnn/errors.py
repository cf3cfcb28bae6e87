"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid construction parameters (bad step size, non-trace-class prior, ...)."""


class InputError(ValueError):
    """Invalid runtime input (out-of-domain point, empty record stream, missing file)."""


class EvaluationError(RuntimeError):
    """A likelihood or forward-model evaluation failed.

    ``context`` carries whatever is useful for diagnosing the failure
    (grid size, residual, parameter norm, ...).
    """

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        base = super().__str__()
        if not self.context:
            return base
        ctx = ", ".join(f"{k}={v!r}" for k, v in self.context.items())
        return f"{base} ({ctx})"


class NonConvergenceError(EvaluationError):
    """Iterative solver hit its iteration cap before reaching tolerance."""


class ChainAbortedError(RuntimeError):
    """Too many failed likelihood evaluations in one chain."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
