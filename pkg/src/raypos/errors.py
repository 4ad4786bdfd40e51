"""Exception hierarchy shared by the library and the CLI."""


class RayposError(Exception):
    """Base class for all raypos errors."""


class SceneLoadError(RayposError):
    """Scene file is unreadable or describes invalid geometry."""


class OriginOutsideScene(RayposError):
    """A ray was launched from a point outside the scene bounds."""


class NoCellScored(RayposError):
    """Every grid cell ended with a zero score (coverage failure)."""

    def __init__(self, message, score=None):
        super().__init__(message)
        self.score = score


class EmptyScore(RayposError):
    """An estimate was requested from an all-zero score map."""


class CalibrationMissing(RayposError):
    """No ground-truth AoA is available for a requested UE position."""


class EmptyResults(RayposError):
    """Summaries need at least one trial result."""


class ConfigError(RayposError):
    """Run configuration failed schema validation."""
