"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, IO errors -> 3,
NumericalError (and subclasses) -> 4.
"""


class ConfigError(ValueError):
    """A configuration value violates a precondition or schema."""


class NumericalError(RuntimeError):
    """A numerical operation failed (singularity, divergence, ...)."""


class SingularMatrixError(NumericalError):
    """A linear solve hit a (numerically) singular matrix."""


class TrainingDivergence(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
