"""Spherical microphone array description and capsule layout files."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

DEFAULT_LAYOUT = "em32.txt"


def read_layout(path) -> np.ndarray:
    """Parse a capsule layout file.

    One capsule per line, ``index azimuth_deg elevation_deg``; blank lines and
    ``#`` comments are ignored. Rows are returned in index order as an
    ``(Q, 2)`` array of (azimuth, elevation) degrees.
    """
    rows = {}
    text = Path(path).read_text() if not hasattr(path, "read_text") else path.read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'index azimuth elevation'")
        idx = int(parts[0])
        if idx in rows:
            raise ValueError(f"{path}:{lineno}: duplicate capsule index {idx}")
        rows[idx] = (float(parts[1]), float(parts[2]))
    if sorted(rows) != list(range(len(rows))):
        raise ValueError(f"{path}: capsule indices must be 0..Q-1")
    return np.array([rows[i] for i in range(len(rows))], dtype=float)


def write_layout(path, capsule_dirs) -> None:
    lines = ["# index azimuth_deg elevation_deg"]
    for i, (az, el) in enumerate(np.asarray(capsule_dirs, dtype=float)):
        lines.append(f"{i} {float(az)!r} {float(el)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def default_layout() -> np.ndarray:
    return read_layout(resources.files("echolocate") / "data" / DEFAULT_LAYOUT)


@dataclass(frozen=True)
class ArraySpec:
    """Rigid spherical array: capsule directions, radius, SH order, rate."""

    capsule_dirs: np.ndarray = field(default_factory=default_layout)
    radius: float = 0.042
    order: int = 4
    sample_rate: int = 16000

    def __post_init__(self):
        dirs = np.asarray(self.capsule_dirs, dtype=float)
        object.__setattr__(self, "capsule_dirs", dirs)
        if dirs.ndim != 2 or dirs.shape[1] != 2:
            raise ValueError("capsule_dirs must have shape (Q, 2)")
        if dirs.shape[0] != 32:
            raise ValueError(f"expected 32 capsules, got {dirs.shape[0]}")
        if (self.order + 1) ** 2 > dirs.shape[0]:
            raise ValueError("SH order too high for the capsule count")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def n_capsules(self) -> int:
        return self.capsule_dirs.shape[0]

    @property
    def n_coeffs(self) -> int:
        return (self.order + 1) ** 2

    @classmethod
    def from_file(cls, path, **kw) -> "ArraySpec":
        return cls(capsule_dirs=read_layout(path), **kw)
