"""Exception and warning types shared across the package."""


class ConfigError(Exception):
    """Bad network specification or run configuration."""


class ModelError(Exception):
    """Structurally invalid model (e.g. a kernel with no absorption)."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InconsistentObservationError(RuntimeError):
    """An observation has zero likelihood under every state."""

    def __init__(self, message, sensor_id=None):
        super().__init__(message)
        self.sensor_id = sensor_id


class EstimatorUndefinedError(ValueError):
    """Location estimate requested from a belief with no in-network mass."""


class RunawayEpisodeError(RuntimeError):
    """Episode exceeded the step cap; the kernel is probably not absorbing."""


class TrackLossWarning(UserWarning):
    """Particle weights collapsed; belief fell back to prediction only."""


class TruncationWarning(UserWarning):
    """A value series was truncated while residual mass was non-negligible."""
