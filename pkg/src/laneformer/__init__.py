"""Desk-scale lane detection transformer with detection-aware attention."""
__version__ = "0.1.0"

from .errors import FormatError, GeometryError, LaneformerError, NonFiniteError, ShapeError  # noqa: E402
from .lanes import Lane  # noqa: E402
from .model import ModelConfig  # noqa: E402

__all__ = ["FormatError", "GeometryError", "LaneformerError", "Lane", "ModelConfig", "NonFiniteError",
           "ShapeError", "__version__"]
