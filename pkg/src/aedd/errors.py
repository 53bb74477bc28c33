"""Exception types shared across the package."""


class AeddError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(AeddError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateDataError(AeddError, ValueError):
    """A dataset lacks the variation required by the operation."""


class DatasetFormatError(AeddError, ValueError):
    """A dataset file does not conform to the CSV schema."""


class ModelFormatError(AeddError, ValueError):
    """A model file is truncated, inconsistent, or of the wrong version."""


class ShapeMismatchError(AeddError, ValueError):
    """An array has the wrong dimensions for the requested operation."""


class TrainingDivergedError(AeddError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss_value: float):
        self.epoch = epoch
        self.loss_value = loss_value
        super().__init__(f"non-finite training loss at epoch {epoch}: {loss_value}")


class CoverageError(AeddError, RuntimeError):
    """Too few supporting nodes to build shape functions at a point."""


class LocalSolverError(AeddError, RuntimeError):
    """A material local solver failed to produce a valid state."""


class NewtonError(AeddError, RuntimeError):
    """The global Newton iteration failed to converge."""

    def __init__(self, message: str, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class ConfigError(AeddError, ValueError):
    """A run configuration file is malformed or inconsistent."""
