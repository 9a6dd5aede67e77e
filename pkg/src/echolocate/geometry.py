"""Shoebox rooms, boundary planes, mirror images and direction conventions.

Two frames are used throughout the package:

* the *room frame*, origin at the lower-left floor corner, used by the
  simulator and for scene sampling;
* the *array frame*, origin at the array centre with axes parallel to the
  room frame, used by every inference stage.

Azimuth is measured counter-clockwise from +x in the horizontal plane and
lies in [0, 360). Elevation is positive above the horizontal plane of the
array. Points are plain ``numpy`` arrays of shape (3,).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SPEED_OF_SOUND = 343.0

BOUNDARY_LABELS = ("floor", "ceiling", "wall+x", "wall-x", "wall+y", "wall-y", "unknown")


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a finite float (3,) vector from three scalars or a sequence."""
    if y is None and z is None:
        v = np.asarray(x, dtype=float).reshape(3)
    else:
        v = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector {v}")
    return v


@dataclass(frozen=True)
class Direction:
    """Azimuth/elevation pair in degrees."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not -90.0 - 1e-9 <= self.elevation <= 90.0 + 1e-9:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        az = float(self.azimuth) % 360.0
        if az >= 360.0:  # -1e-17 % 360 == 360.0
            az = 0.0
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", float(np.clip(self.elevation, -90.0, 90.0)))

    def unit(self) -> np.ndarray:
        return unit_vector(self)

    def to_dict(self) -> dict:
        return {"azimuth": self.azimuth, "elevation": self.elevation}


def direction_of(v) -> Direction:
    """Direction of a non-zero vector. At the poles azimuth is defined as 0."""
    v = np.asarray(v, dtype=float)
    r = float(np.linalg.norm(v))
    if r == 0.0:
        raise ValueError("direction of zero vector is undefined")
    horiz = math.hypot(v[0], v[1])
    el = math.degrees(math.atan2(v[2], horiz))
    if horiz <= 1e-15 * r:
        return Direction(0.0, math.copysign(90.0, v[2]))
    az = math.degrees(math.atan2(v[1], v[0]))
    return Direction(az, el)


def unit_vector(d: Direction) -> np.ndarray:
    az, el = math.radians(d.azimuth), math.radians(d.elevation)
    return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def unit_vectors(azimuth_deg, elevation_deg) -> np.ndarray:
    """Vectorised :func:`unit_vector`; returns shape (..., 3)."""
    az = np.radians(np.asarray(azimuth_deg, dtype=float))
    el = np.radians(np.asarray(elevation_deg, dtype=float))
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def angle_between(a, b) -> float:
    """Angle in degrees between two vectors or two Directions."""
    if isinstance(a, Direction):
        a = unit_vector(a)
    if isinstance(b, Direction):
        b = unit_vector(b)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # atan2 keeps full precision near 0 and 180 degrees, unlike acos
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(a, b))), float(np.dot(a, b))))


@dataclass(frozen=True)
class BoundaryPlane:
    """Plane given by a point on it and a unit normal pointing into the room."""

    point: np.ndarray
    normal: np.ndarray
    label: str = "unknown"

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0.0:
            raise ValueError("plane normal must be non-zero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "point", vec3(self.point))
        if self.label not in BOUNDARY_LABELS:
            raise ValueError(f"unknown boundary label {self.label!r}")

    @property
    def distance_to_origin(self) -> float:
        return abs(float(np.dot(self.point, self.normal)))

    def signed_distance(self, p) -> float:
        return float(np.dot(np.asarray(p, dtype=float) - self.point, self.normal))

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "normal": self.normal.tolist(), "label": self.label}


def mirror_point(p, plane: BoundaryPlane) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p - 2.0 * plane.signed_distance(p) * plane.normal


@dataclass(frozen=True, eq=False)
class RoomScene:
    """Ground truth for one simulated recording (room frame)."""

    dims: np.ndarray
    source_pos: np.ndarray
    array_pos: np.ndarray
    t60: float = 0.5
    reflection_coeffs: tuple | None = None
    sound_speed: float = SPEED_OF_SOUND
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("dims", "source_pos", "array_pos"):
            object.__setattr__(self, name, vec3(getattr(self, name)))
        if np.any(self.dims <= 0):
            raise ValueError("room dimensions must be positive")
        for name in ("source_pos", "array_pos"):
            p = getattr(self, name)
            if np.any(p <= 0) or np.any(p >= self.dims):
                raise ValueError(f"{name} {p} is not strictly inside the room {self.dims}")
        if self.reflection_coeffs is not None:
            rc = tuple(float(r) for r in self.reflection_coeffs)
            if len(rc) != 6 or any(not 0.0 <= r <= 1.0 for r in rc):
                raise ValueError("need 6 reflection coefficients in [0, 1]")
            object.__setattr__(self, "reflection_coeffs", rc)

    def __eq__(self, other):
        if not isinstance(other, RoomScene):
            return NotImplemented
        return (
            np.array_equal(self.dims, other.dims)
            and np.array_equal(self.source_pos, other.source_pos)
            and np.array_equal(self.array_pos, other.array_pos)
            and self.t60 == other.t60
            and self.reflection_coeffs == other.reflection_coeffs
            and self.sound_speed == other.sound_speed
        )

    __hash__ = None

    def with_(self, **kw) -> "RoomScene":
        return replace(self, **kw)

    @property
    def array_height(self) -> float:
        return float(self.array_pos[2])

    def to_array_frame(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) - self.array_pos

    def to_room_frame(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) + self.array_pos

    def to_dict(self) -> dict:
        return {
            "dims": self.dims.tolist(),
            "source_pos": self.source_pos.tolist(),
            "array_pos": self.array_pos.tolist(),
            "t60": self.t60,
            "reflection_coeffs": None if self.reflection_coeffs is None else list(self.reflection_coeffs),
            "sound_speed": self.sound_speed,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomScene":
        return cls(
            dims=d["dims"],
            source_pos=d["source_pos"],
            array_pos=d["array_pos"],
            t60=d.get("t60", 0.5),
            reflection_coeffs=d.get("reflection_coeffs"),
            sound_speed=d.get("sound_speed", SPEED_OF_SOUND),
            meta=d.get("meta", {}),
        )


# face order shared with reflection_coeffs: floor, ceiling, x=0, x=Lx, y=0, y=Ly
FACE_LABELS = ("floor", "ceiling", "wall-x", "wall+x", "wall-y", "wall+y")


def room_boundaries(scene: RoomScene, frame: str = "room") -> list[BoundaryPlane]:
    """The six faces of the shoebox, normals pointing into the room."""
    lx, ly, lz = scene.dims
    faces = [
        ((0, 0, 0), (0, 0, 1)),
        ((0, 0, lz), (0, 0, -1)),
        ((0, 0, 0), (1, 0, 0)),
        ((lx, 0, 0), (-1, 0, 0)),
        ((0, 0, 0), (0, 1, 0)),
        ((0, ly, 0), (0, -1, 0)),
    ]
    shift = scene.array_pos if frame == "array" else np.zeros(3)
    if frame not in ("room", "array"):
        raise ValueError(f"unknown frame {frame!r}")
    return [
        BoundaryPlane(np.asarray(p, dtype=float) - shift, np.asarray(n, dtype=float), label)
        for (p, n), label in zip(faces, FACE_LABELS)
    ]


def first_order_images(scene: RoomScene, frame: str = "room") -> list[tuple[np.ndarray, str]]:
    src = scene.source_pos if frame == "room" else scene.to_array_frame(scene.source_pos)
    return [(mirror_point(src, b), b.label) for b in room_boundaries(scene, frame)]


@dataclass(frozen=True)
class FloorPathAngles:
    alpha1: float
    alpha2: float
    h: float
    dt: float


def floor_path_oracle(scene: RoomScene) -> FloorPathAngles:
    """Exact direct/floor-reflection angles, array height and delay."""
    src = scene.to_array_frame(scene.source_pos)
    if np.linalg.norm(src) == 0.0:
        raise ValueError("source and array coincide")
    h = scene.array_height
    image = src.copy()
    image[2] = -2.0 * h - src[2]
    d_direct = float(np.linalg.norm(src))
    d_image = float(np.linalg.norm(image))
    alpha1 = direction_of(src).elevation
    alpha2 = -direction_of(image).elevation
    return FloorPathAngles(alpha1, alpha2, h, (d_image - d_direct) / scene.sound_speed)


def label_from_normal(normal) -> str:
    """Guess a face label from the dominant axis of an inward normal."""
    n = np.asarray(normal, dtype=float)
    axis = int(np.argmax(np.abs(n)))
    positive = n[axis] > 0
    if axis == 2:
        return "floor" if positive else "ceiling"
    name = "x" if axis == 0 else "y"
    # inward normal +x means the wall sits on the -x side of the room
    return f"wall-{name}" if positive else f"wall+{name}"
