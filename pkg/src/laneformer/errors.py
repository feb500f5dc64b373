class LaneformerError(Exception):
    """Base class for package errors."""


class ShapeError(LaneformerError, ValueError):
    """Operand shapes are not conformable; the message names both shapes."""


class NonFiniteError(LaneformerError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class FormatError(LaneformerError, ValueError):
    """Malformed input file content."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GeometryError(LaneformerError, ValueError):
    """Degenerate lane or box geometry."""
