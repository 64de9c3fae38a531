"""Error types shared across the package."""


class MatSenseError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(MatSenseError, ValueError):
    """Shapes or rank parameters are inconsistent."""


class InvalidSpectrumError(MatSenseError, ValueError):
    """Requested singular values are not strictly decreasing and positive."""


class EmptyEnsembleError(MatSenseError, ValueError):
    """A measurement ensemble with zero measurements was requested."""


class UnsupportedModeError(MatSenseError, ValueError):
    """Operation requires a ground-truth mode other than the one supplied."""


class DivergenceError(MatSenseError, RuntimeError):
    """Gradient-descent iterates contain non-finite entries."""


class ConvergenceError(MatSenseError, RuntimeError):
    """No solver restart reached the requested gradient tolerance."""

    def __init__(self, message, best_grad_norm=None):
        super().__init__(message)
        self.best_grad_norm = best_grad_norm


class ConfigError(MatSenseError, ValueError):
    """Experiment configuration failed validation.

    Carries the full list of failing fields so one round of feedback
    suffices to fix the file.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(
            f"  - {p}" for p in self.problems))


class SchemaError(MatSenseError, ValueError):
    """A CSV file does not match the trajectory schema."""
