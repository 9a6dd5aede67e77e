"""Source distance from the direct path, the floor reflection and the array height."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .doa import DoaSet
from .geometry import SPEED_OF_SOUND, Direction, RoomScene, direction_of, floor_path_oracle, unit_vector
from .mlp import MlpModel, fit

METHODS = ("D-height", "D-TDOA", "D-DNN")
METHOD_ALIASES = {"height": "D-height", "tdoa": "D-TDOA", "dnn": "D-DNN"}
DISTANCE_CLAMP = (0.1, 20.0)
DDNN_SIZES = (4, 64, 64, 32, 1)


class FloorNotFound(LookupError):
    pass


@dataclass(frozen=True)
class LocalizationFeatures:
    h: float
    alpha1: float
    alpha2: float
    dt: float
    direct_direction: Direction | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("array height must be positive")
        if not self.alpha2 > self.alpha1:
            raise ValueError("floor reflection must arrive below the direct path")
        if self.dt < 0:
            raise ValueError("delay must be non-negative")

    def vector(self) -> np.ndarray:
        return np.array([self.h, self.alpha1, self.alpha2, self.dt])

    @classmethod
    def from_scene(cls, scene: RoomScene) -> "LocalizationFeatures":
        """Exact features of a simulated scene."""
        o = floor_path_oracle(scene)
        src = scene.to_array_frame(scene.source_pos)
        return cls(o.h, o.alpha1, o.alpha2, o.dt, direction_of(src))


@dataclass
class SourceEstimate:
    d1: float
    position: np.ndarray
    method: str
    clamped: bool = False

    def __post_init__(self):
        if not self.d1 > 0:
            raise ValueError("distance must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @classmethod
    def from_distance(cls, d1: float, direction: Direction, method: str, clamped=False) -> "SourceEstimate":
        return cls(float(d1), float(d1) * unit_vector(direction), method, clamped)

    def to_dict(self) -> dict:
        return {"d1": self.d1, "position": [float(v) for v in self.position], "method": self.method,
                "clamped": self.clamped}


def distance_from_height(h, alpha1, alpha2):
    """``d1 = h sin(pi - 2 a2) / (sin a2 sin(a2 - a1))``; angles in degrees.

    Works elementwise on arrays; invalid geometry raises ``ValueError``.
    """
    a1 = np.radians(np.asarray(alpha1, dtype=float))
    a2 = np.radians(np.asarray(alpha2, dtype=float))
    h = np.asarray(h, dtype=float)
    if np.any(a2 <= 0) or np.any(a2 >= math.pi / 2) or np.any(a2 <= a1):
        raise ValueError("need 0 < alpha2 < 90 deg and alpha2 > alpha1")
    d1 = h * np.sin(math.pi - 2 * a2) / (np.sin(a2) * np.sin(a2 - a1))
    return float(d1) if d1.ndim == 0 else d1


def distance_from_tdoa(dt, alpha1, alpha2, c=SPEED_OF_SOUND):
    """``d1 = c dt cos a2 / (cos a1 - cos a2)``; angles in degrees."""
    a1 = np.radians(np.asarray(alpha1, dtype=float))
    a2 = np.radians(np.asarray(alpha2, dtype=float))
    dt = np.asarray(dt, dtype=float)
    den = np.cos(a1) - np.cos(a2)
    if np.any(dt <= 0):
        raise ValueError("delay must be positive")
    if np.any(den <= 0):
        raise ValueError("degenerate geometry: cos(alpha1) <= cos(alpha2)")
    d1 = c * dt * np.cos(a2) / den
    return float(d1) if d1.ndim == 0 else d1


def select_floor_reflection(doas: DoaSet, taus, c=SPEED_OF_SOUND, h=None, max_elevation=-5.0) -> int:
    """Index (into ``doas.reflections``) of the most floor-consistent reflection.

    Candidates are valid reflections below ``max_elevation``. With the array
    height known the one whose delay best satisfies
    ``(d1 + c dt) cos a2 = d1 cos a1`` wins; without it the lowest one does.
    """
    alpha1 = doas.direct.elevation
    best = None
    for i, (refl, est) in enumerate(zip(doas.reflections, taus)):
        if est is None or not est.valid or refl.elevation >= max_elevation:
            continue
        alpha2 = -refl.elevation
        if h is not None:
            try:
                d1 = distance_from_height(h, alpha1, alpha2)
            except ValueError:
                continue
            resid = abs((d1 + c * est.tau) * math.cos(math.radians(alpha2)) - d1 * math.cos(math.radians(alpha1)))
        else:
            resid = 0.0
        key = (resid, refl.elevation)
        if best is None or key < best[0]:
            best = (key, i)
    if best is None:
        raise FloorNotFound("no valid reflection below the horizon")
    return best[1]


# ---------------------------------------------------------------------------
# learned fusion


@dataclass(frozen=True)
class NoiseSpec:
    angle_deg: float = 2.0
    dt_s: float = 0.5e-3
    h_m: float = 0.01

    def perturb(self, x: np.ndarray, rng) -> np.ndarray:
        """Add zero-mean Gaussian noise to rows ``[h, alpha1, alpha2, dt]``."""
        scale = np.array([self.h_m, self.angle_deg, self.angle_deg, self.dt_s])
        return x + rng.standard_normal(x.shape) * scale


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 150
    batch_size: int = 128
    lr: float = 2e-3
    lr_decay: float = 0.98
    val_fraction: float = 0.1


def ddnn_train(dataset, noise: NoiseSpec | None = NoiseSpec(), params: TrainParams = TrainParams(),
               seed: int = 0) -> MlpModel:
    """Fit the 4-64-64-32-1 regressor on ``(features, d1)`` pairs.

    ``dataset`` is a sequence of ``(LocalizationFeatures, d1)`` or a tuple of
    arrays ``(x (n, 4), d1 (n,))``. Inputs are re-perturbed every epoch.
    """
    x, y = _as_arrays(dataset)
    if len(x) < 1000:
        raise ValueError("need at least 1000 training samples")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    n_val = int(round(params.val_fraction * len(x)))
    val, train = order[:n_val], order[n_val:]
    model = MlpModel.init(list(DDNN_SIZES), seed=seed)
    perturb = None if noise is None else noise.perturb
    x_val = x[val] if noise is None else noise.perturb(x[val], np.random.default_rng(seed + 1))
    fit(model, x[train], y[train], epochs=params.epochs, batch_size=params.batch_size, lr=params.lr,
        lr_decay=params.lr_decay, perturb=perturb, x_val=x_val, y_val=y[val], seed=seed)
    return model


def _as_arrays(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        return np.asarray(dataset[0], dtype=float), np.asarray(dataset[1], dtype=float)
    x = np.array([f.vector() for f, _ in dataset])
    y = np.array([d for _, d in dataset], dtype=float)
    return x, y


def ddnn_infer(model: MlpModel, features: LocalizationFeatures) -> SourceEstimate:
    raw = float(model.predict(features.vector()[None, :])[0])
    lo, hi = DISTANCE_CLAMP
    d1 = min(max(raw, lo), hi) if np.isfinite(raw) else hi
    direction = features.direct_direction or Direction(0.0, features.alpha1)
    return SourceEstimate.from_distance(d1, direction, "D-DNN", clamped=not (lo < raw < hi))


def estimate_source(features: LocalizationFeatures, method: str, model: MlpModel | None = None,
                    c=SPEED_OF_SOUND) -> SourceEstimate:
    """Distance by the named method, placed along the direct-path direction."""
    method = METHOD_ALIASES.get(method, method)
    direction = features.direct_direction or Direction(0.0, features.alpha1)
    if method == "D-height":
        d1 = distance_from_height(features.h, features.alpha1, features.alpha2)
    elif method == "D-TDOA":
        d1 = distance_from_tdoa(features.dt, features.alpha1, features.alpha2, c)
    elif method == "D-DNN":
        if model is None:
            raise ValueError("D-DNN needs a trained model")
        return ddnn_infer(model, features)
    else:
        raise ValueError(f"unknown distance method {method!r}")
    return SourceEstimate.from_distance(d1, direction, method)


def synthetic_features(scenes) -> tuple[np.ndarray, np.ndarray]:
    """Exact feature rows and distances for scenes whose source is above the floor path."""
    rows, d = [], []
    for s in scenes:
        f = LocalizationFeatures.from_scene(s)
        rows.append(f.vector())
        d.append(float(np.linalg.norm(s.source_pos - s.array_pos)))
    return np.array(rows), np.array(d)
