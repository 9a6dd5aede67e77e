"""Source localisation and room-geometry inference with a spherical microphone array."""

from .arrays import ArraySpec
from .geometry import BoundaryPlane, Direction, RoomScene

__all__ = ["ArraySpec", "BoundaryPlane", "Direction", "RoomScene"]
__version__ = "0.1.0"
