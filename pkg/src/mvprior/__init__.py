"""3D prior construction for multi-view novel view synthesis.

Metric depth alignment, forward warping of RGB and canonical coordinate
maps, Plucker ray maps, conditioning stack assembly and a key-rescaled
attention kernel.
"""

from mvprior.errors import (
    DegenerateDepthError,
    InsufficientDataError,
    MvPriorError,
    PreconditionError,
    SceneLoadError,
    StageError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateDepthError",
    "InsufficientDataError",
    "MvPriorError",
    "PreconditionError",
    "SceneLoadError",
    "StageError",
    "ValidationError",
    "__version__",
]
