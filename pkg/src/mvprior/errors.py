"""Exception hierarchy shared by all modules."""


class MvPriorError(Exception):
    """Base class for every error raised by mvprior."""


class ValidationError(MvPriorError, ValueError):
    """An input violates a documented invariant."""


class PreconditionError(MvPriorError):
    """A required attachment (depth, image, samples) is missing."""


class InsufficientDataError(MvPriorError):
    """Too few usable observations to fit a model."""


class DegenerateDepthError(MvPriorError):
    """The monocular depth has zero spread over the sample pixels."""


class SceneLoadError(MvPriorError):
    """A scene manifest or one of its files could not be loaded."""

    def __init__(self, message, view_index=None):
        if view_index is not None:
            message = f"view {view_index}: {message}"
        super().__init__(message)
        self.view_index = view_index


class StageError(MvPriorError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage, message, views=()):
        where = f" (views {list(views)})" if views else ""
        super().__init__(f"stage '{stage}' failed{where}: {message}")
        self.stage = stage
        self.views = tuple(views)
