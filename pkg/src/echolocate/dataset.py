"""Random room scenes and an energy voice-activity detector."""

from __future__ import annotations

import numpy as np

from .config import ExperimentConfig
from .geometry import RoomScene
from .simulator import mean_absorption

MAX_TRIES = 1000
SPLITS = ("train", "val", "test")


class InfeasibleScene(RuntimeError):
    pass


def _sample_point(rng, dims, clearance):
    lo = np.full(3, clearance)
    hi = np.asarray(dims) - clearance
    if np.any(hi <= lo):
        return None
    return rng.uniform(lo, hi)


def sample_scene(rng, config: ExperimentConfig, scene_id: str = "") -> RoomScene:
    """One room with array and source at least ``clearance`` from every face and each other."""
    s = config.scene
    for _ in range(MAX_TRIES):
        dims = rng.uniform(s.room_min, s.room_max)
        t60 = float(rng.uniform(s.t60_min, s.t60_max))
        array_pos = _sample_point(rng, dims, s.clearance)
        source_pos = _sample_point(rng, dims, s.clearance)
        if array_pos is None or source_pos is None:
            continue
        if np.linalg.norm(source_pos - array_pos) < max(s.clearance, 1e-6):
            continue
        scene = RoomScene(dims, source_pos, array_pos, t60=t60, meta={"id": scene_id})
        if mean_absorption(scene) >= 1.0:
            continue
        return scene
    raise InfeasibleScene(f"no feasible scene after {MAX_TRIES} tries; check room ranges and clearance")


def split_labels(n: int) -> list[str]:
    """80/10/10 split labels in scene order."""
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    return ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)


def generate_dataset(config: ExperimentConfig, seed: int | None = None, n: int | None = None) -> list[RoomScene]:
    """Deterministic list of random scenes, each tagged with its id and split."""
    seed = config.run.seed if seed is None else seed
    n = config.run.n_scenes if n is None else n
    rng = np.random.default_rng(seed)
    labels = split_labels(n)
    scenes = []
    for i in range(n):
        sc = sample_scene(rng, config, f"scene{i:04d}")
        sc.meta["split"] = labels[i]
        sc.meta["seed"] = int(seed)
        scenes.append(sc)
    return scenes


def energy_vad(signal, frame_len: int = 5000, threshold_ratio: float = 0.1) -> np.ndarray:
    """Boolean activity per complete frame: RMS at least ``threshold_ratio`` times the loudest frame.

    Multichannel input ``(C, n)`` is reduced to its mean power over channels.
    """
    x = np.asarray(getattr(signal, "data", signal), dtype=float)
    x = np.atleast_2d(x)
    n_frames = x.shape[1] // frame_len
    if n_frames == 0:
        return np.zeros(0, dtype=bool)
    frames = x[:, : n_frames * frame_len].reshape(x.shape[0], n_frames, frame_len)
    rms = np.sqrt(np.mean(frames**2, axis=(0, 2)))
    peak = rms.max()
    if peak == 0:
        return np.zeros(n_frames, dtype=bool)
    return rms >= threshold_ratio * peak
