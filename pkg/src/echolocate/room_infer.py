"""Image sources and boundary planes from a located source and its reflections."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SPEED_OF_SOUND, BoundaryPlane, Direction, angle_between, label_from_normal, unit_vector
from .source_loc import SourceEstimate

DEFAULT_GATES = {"theta": 15.0, "distance": 0.5}


def locate_image(d_s0: float, direction: Direction, t_j: float, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Array-centred image position ``(d_s0 + c T_j) u(direction)``."""
    if d_s0 <= 0:
        raise ValueError("source distance must be positive")
    if t_j < 0:
        raise ValueError("delay must be non-negative")
    return (d_s0 + c * t_j) * unit_vector(direction)


def boundary_from_pair(p_s, p_img) -> BoundaryPlane:
    """Perpendicular bisector plane of source and image, normal toward the source."""
    p_s = np.asarray(p_s, dtype=float)
    p_img = np.asarray(p_img, dtype=float)
    diff = p_s - p_img
    norm = float(np.linalg.norm(diff))
    if norm == 0.0:
        raise ValueError("source and image coincide")
    normal = diff / norm
    return BoundaryPlane(0.5 * (p_s + p_img), normal, label_from_normal(normal))


def plane_metrics(est: BoundaryPlane, truth: BoundaryPlane) -> tuple[float, float]:
    """``(distance_diff, normal_angle_deg)`` with distance_diff = truth - estimate."""
    diff = truth.distance_to_origin - est.distance_to_origin
    return diff, angle_between(est.normal, truth.normal)


@dataclass
class MatchedPair:
    truth_index: int
    est_index: int
    label: str
    distance_diff: float
    normal_angle: float
    detected: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ErrorSummary:
    """Mean/SD (population) of |errors| over valid rows, plus the gated pass rate."""

    mean: float | None
    sd: float | None
    rate: float
    n: int
    n_pass: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def summarize(errors, valid=None, gate: float | None = None) -> ErrorSummary:
    """Aggregate absolute errors.

    Mean and SD cover the valid rows; ``rate`` is the fraction of all rows
    that are valid and (when ``gate`` is given) within the gate.
    """
    err = np.abs(np.asarray(errors, dtype=float))
    ok = np.ones(err.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    ok = ok & np.isfinite(err)
    passed = ok & (err <= gate) if gate is not None else ok
    n = int(err.size)
    rate = float(passed.sum() / n) if n else 0.0
    sel = err[ok]
    if sel.size == 0:
        return ErrorSummary(None, None, rate, n, 0)
    return ErrorSummary(float(sel.mean()), float(sel.std()), rate, n, int(passed.sum()))


@dataclass
class BoundaryMetrics:
    pairs: list
    n_truth: int
    r_dect: float
    distance: ErrorSummary
    angle: ErrorSummary

    def detected_labels(self) -> list[str]:
        return [p.label for p in self.pairs if p.detected]

    def to_dict(self) -> dict:
        return {
            "pairs": [p.to_dict() for p in self.pairs],
            "n_truth": self.n_truth,
            "r_dect": self.r_dect,
            "distance": self.distance.to_dict(),
            "angle": self.angle.to_dict(),
        }


def match_boundaries(est: list, truth: list, gates: dict | None = None) -> BoundaryMetrics:
    """One-to-one greedy matching by ascending normal angle.

    A truth plane is detected iff its match passes both the angle and the
    distance gates.
    """
    if not truth:
        raise ValueError("no ground-truth boundaries")
    g = dict(DEFAULT_GATES, **(gates or {}))
    cand = []
    for i, t in enumerate(truth):
        for j, e in enumerate(est):
            dd, th = plane_metrics(e, t)
            cand.append((th, abs(dd), i, j, dd))
    cand.sort()
    used_t, used_e, pairs = set(), set(), []
    for th, _, i, j, dd in cand:
        if i in used_t or j in used_e:
            continue
        used_t.add(i)
        used_e.add(j)
        detected = th <= g["theta"] and abs(dd) <= g["distance"]
        pairs.append(MatchedPair(i, j, truth[i].label, dd, th, detected))
    pairs.sort(key=lambda p: p.truth_index)
    hit = [p for p in pairs if p.detected]
    return BoundaryMetrics(
        pairs=pairs,
        n_truth=len(truth),
        r_dect=len(hit) / len(truth),
        distance=summarize([p.distance_diff for p in hit]),
        angle=summarize([p.normal_angle for p in hit]),
    )


@dataclass
class InferredRoom:
    source: SourceEstimate
    images: list  # (position, reflection index)
    boundaries: list
    metrics: BoundaryMetrics | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "images": [{"position": [float(v) for v in p], "reflection": int(i)} for p, i in self.images],
            "planes": [b.to_dict() for b in self.boundaries],
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
        }


def infer_room(source: SourceEstimate, reflections, c: float = SPEED_OF_SOUND) -> InferredRoom:
    """Planes for every ``(index, Direction, tau)`` reflection with a valid delay."""
    images, planes = [], []
    for idx, direction, tau in reflections:
        p_img = locate_image(source.d1, direction, tau, c)
        try:
            plane = boundary_from_pair(source.position, p_img)
        except ValueError:
            continue
        images.append((p_img, idx))
        planes.append(plane)
    return InferredRoom(source, images, planes)
