"""Exception hierarchy shared by all modules."""


class FpepsError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(FpepsError):
    pass


class ShapeError(FpepsError):
    pass


class SingularChannelError(FpepsError):
    """Raised when ``D - G_in`` is numerically singular.

    ``cond`` holds the condition-number estimate that triggered the error.
    """

    def __init__(self, message: str, cond: float):
        super().__init__(message)
        self.cond = cond


class ParameterError(FpepsError):
    pass


class ResourceError(FpepsError):
    """A requested computation would exceed a configured memory cap."""

    def __init__(self, message: str, estimate_bytes: float | None = None):
        super().__init__(message)
        self.estimate_bytes = estimate_bytes


class ConvergenceError(FpepsError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NondeterminateChern(FpepsError):
    """Winding number could not be resolved to an integer."""


class GeometryError(FpepsError):
    pass


class StaggeringError(FpepsError):
    pass


class NumericalFloorError(FpepsError):
    pass
