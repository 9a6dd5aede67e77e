"""End-to-end processing of one scene and aggregation over many."""

from __future__ import annotations

import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .dataset import energy_vad, generate_dataset
from .doa import DirectionGrid, DoaSet, covariance, pick_peaks, sps_mvdr
from .encode import HoaFrames, encode_hoa
from .geometry import RoomScene, angle_between, direction_of, first_order_images, room_boundaries
from .mlp import MlpModel
from .room_infer import infer_room, match_boundaries, summarize
from .simulator import MultichannelSignal, render_array, speech_shaped_noise, white_noise
from .source_loc import (
    FloorNotFound,
    LocalizationFeatures,
    NoiseSpec,
    TrainParams,
    ddnn_train,
    estimate_source,
    select_floor_reflection,
    synthetic_features,
)
from .tdoa import TdoaEstimate, extract_beam, frame_tdoas, median_tdoa

THREADS_ENV = "ECHOLOCATE_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def scene_seed(scene: RoomScene, base: int) -> int:
    idx = scene.meta.get("id", "")
    digits = "".join(ch for ch in str(idx) if ch.isdigit())
    return base * 100_003 + (int(digits) if digits else 0)


def source_signal(config: ExperimentConfig, seed: int) -> np.ndarray:
    n = int(round(config.scene.duration * config.array.sample_rate))
    if config.scene.signal == "speech":
        return speech_shaped_noise(n, config.array.sample_rate, seed)
    return white_noise(n, seed)


def render_scene(scene: RoomScene, config: ExperimentConfig, seed: int) -> MultichannelSignal:
    src = source_signal(config, seed)
    return render_array(scene, src, config.array_spec(), max_order=config.scene.max_order,
                        snr_db=config.scene.snr_db, seed=seed + 1)


# ---------------------------------------------------------------------------
# oracle quantities


def oracle_paths(scene: RoomScene) -> list[dict]:
    """Direction and delay relative to the direct path of each first-order image (array frame)."""
    src = scene.to_array_frame(scene.source_pos)
    d0 = float(np.linalg.norm(src))
    out = []
    for pos, label in first_order_images(scene, "array"):
        out.append({"label": label, "direction": direction_of(pos),
                    "tau": (float(np.linalg.norm(pos)) - d0) / scene.sound_speed})
    return out


def oracle_doas(scene: RoomScene) -> DoaSet:
    paths = oracle_paths(scene)
    direct = direction_of(scene.to_array_frame(scene.source_pos))
    return DoaSet(direct, [p["direction"] for p in paths], [0.0] * (len(paths) + 1))


# ---------------------------------------------------------------------------
# stages


@dataclass
class StageCache:
    """Intermediate results of one run, kept for debugging and plotting."""

    mics: MultichannelSignal | None = None
    hoa: HoaFrames | None = None
    active: np.ndarray | None = None
    sps: object = None
    doas: DoaSet | None = None
    per_frame: list = field(default_factory=list)


def _r(x, nd=9):
    """Round floats so reports are stable text."""
    if x is None:
        return None
    if isinstance(x, (float, np.floating)):
        return None if not math.isfinite(float(x)) else round(float(x), nd)
    if isinstance(x, dict):
        return {k: _r(v, nd) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_r(v, nd) for v in x]
    if isinstance(x, np.ndarray):
        return [_r(v, nd) for v in x.tolist()]
    if isinstance(x, np.integer):
        return int(x)
    return x


def run_pipeline(scene_or_mics, config: ExperimentConfig, model: MlpModel | None = None,
                 seed: int | None = None, array_height: float | None = None,
                 cache: StageCache | None = None, timings: dict | None = None) -> dict:
    """Process one scene (or a recording) and return a JSON-ready report row.

    A failing stage is recorded under ``"error"``; everything computed before
    it is still reported.
    """
    cache = cache if cache is not None else StageCache()
    timings = timings if timings is not None else {}
    scene = scene_or_mics if isinstance(scene_or_mics, RoomScene) else None
    row: dict = {"scene": scene.to_dict() if scene is not None else None, "error": None}
    a = config.analysis
    m = config.method
    c = scene.sound_speed if scene is not None else 343.0
    h = scene.array_height if scene is not None else array_height

    def stage(name):
        return _Timer(timings, name)

    try:
        with stage("render"):
            if scene is not None:
                s = scene_seed(scene, config.run.seed) if seed is None else seed
                cache.mics = render_scene(scene, config, s)
            else:
                cache.mics = scene_or_mics
        mics = cache.mics
        spec = config.array_spec()
        if mics.n_channels != spec.n_capsules or mics.sample_rate != spec.sample_rate:
            raise ValueError(f"input has {mics.n_channels} channels at {mics.sample_rate} Hz; "
                             f"expected {spec.n_capsules} at {spec.sample_rate} Hz")

        with stage("encode"):
            cache.hoa = hoa = encode_hoa(mics, spec, config.stft_config())
        with stage("vad"):
            cache.active = active = energy_vad(mics, a.frame_len, a.vad_ratio)
        row["vad"] = {"n_frames": int(active.size), "n_active": int(active.sum())}
        if not active.any():
            raise ValueError("no active frames")
        frame_mask = np.isin(hoa.block_index, np.flatnonzero(active))

        with stage("doa"):
            if m.oracle_doa:
                if scene is None:
                    raise ValueError("oracle DOA needs ground truth")
                doas = oracle_doas(scene)
            else:
                r = covariance(hoa, config.band, frame_mask)
                cache.sps = sps_mvdr(r, DirectionGrid(a.grid_step), a.loading)
                doas = pick_peaks(cache.sps, a.beta_db, a.min_separation)
        cache.doas = doas
        row["doa"] = doas.to_dict()

        with stage("tdoa"):
            taus = _estimate_taus(doas, hoa, active, config, scene, cache)
        row["tdoa"] = _tdoa_rows(doas, taus, scene, config)

        with stage("localize"):
            floor = select_floor_reflection(doas, taus, c, h, a.floor_max_elevation) if h is not None else None
            if floor is None:
                raise FloorNotFound("array height unknown; cannot select the floor reflection")
            row["floor_index"] = floor
            feats = LocalizationFeatures(h, doas.direct.elevation, -doas.reflections[floor].elevation,
                                         taus[floor].tau, doas.direct)
            row["features"] = {"h": feats.h, "alpha1": feats.alpha1, "alpha2": feats.alpha2, "dt": feats.dt}
            estimates = {}
            for method in ("height", "tdoa", "dnn"):
                if method == "dnn" and model is None:
                    continue
                try:
                    estimates[method] = estimate_source(feats, method, model, c)
                except ValueError as exc:
                    estimates[method] = exc
            row["source"] = {
                k: (v.to_dict() if not isinstance(v, Exception) else {"error": str(v)}) for k, v in estimates.items()
            }
            if scene is not None:
                d_true = float(np.linalg.norm(scene.to_array_frame(scene.source_pos)))
                row["source_truth"] = d_true
                for k, v in estimates.items():
                    if not isinstance(v, Exception):
                        row["source"][k]["error"] = v.d1 - d_true
            chosen = estimates.get(m.distance_method)
            if chosen is None:
                raise ValueError(f"distance method {m.distance_method!r} unavailable (no model?)")
            if isinstance(chosen, Exception):
                raise chosen

        with stage("infer"):
            refl = [(i, d, t.tau) for i, (d, t) in enumerate(zip(doas.reflections, taus)) if t.valid]
            room = infer_room(chosen, refl, c)
            if scene is not None:
                gates = {"theta": config.metrics.theta_gate, "distance": config.metrics.distance_gate}
                room.metrics = match_boundaries(room.boundaries, room_boundaries(scene, "array"), gates)
        row["room"] = room.to_dict()
    except Exception as exc:  # noqa: BLE001 - stage failures are data
        row["error"] = {"type": type(exc).__name__, "message": str(exc),
                        "where": traceback.extract_tb(exc.__traceback__)[-1].name}
    return _r(row)


class _Timer:
    def __init__(self, sink, name):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.name] = self.sink.get(self.name, 0.0) + time.perf_counter() - self.t0
        return False


def _estimate_taus(doas: DoaSet, hoa: HoaFrames, active, config, scene, cache) -> list[TdoaEstimate]:
    a = config.analysis
    fs = hoa.sample_rate
    if config.method.oracle_tdoa:
        if scene is None:
            raise ValueError("oracle TDOA needs ground truth")
        paths = oracle_paths(scene)
        out = []
        for d in doas.reflections:
            best = min(paths, key=lambda p: angle_between(p["direction"].unit(), d.unit()))
            out.append(TdoaEstimate(best["tau"], int(round(best["tau"] * fs)), 1.0, True))
        return out
    direct = extract_beam(hoa, doas.direct)
    frames = np.flatnonzero(active)
    out = []
    for d in doas.reflections:
        beam = extract_beam(hoa, d)
        per = frame_tdoas(direct, beam, a.frame_len, frames, config.band, a.sigma, a.exclusion, a.max_delay)
        cache.per_frame.append(per)
        tau = median_tdoa(per)
        if tau is None:
            best = max(per, key=lambda e: e.peak)
            out.append(TdoaEstimate(best.tau, best.lag, best.peak, False))
        else:
            peak = float(np.median([e.peak for e in per if e.valid]))
            out.append(TdoaEstimate(tau, int(round(tau * fs)), peak, True))
    return out


def _tdoa_rows(doas: DoaSet, taus, scene, config) -> list[dict]:
    paths = oracle_paths(scene) if scene is not None else None
    rows = []
    for d, t in zip(doas.reflections, taus):
        r = {"direction": d.to_dict(), **t.to_dict()}
        if paths is not None:
            best = min(paths, key=lambda p: angle_between(p["direction"].unit(), d.unit()))
            sep = angle_between(best["direction"].unit(), d.unit())
            if sep <= config.metrics.theta_gate:
                r["label"] = best["label"]
                r["oracle_tau"] = best["tau"]
                r["error"] = t.tau - best["tau"] if t.valid else None
        rows.append(r)
    return rows


# ---------------------------------------------------------------------------
# many scenes


def train_default_model(config: ExperimentConfig, seed: int | None = None) -> MlpModel:
    """D-DNN trained on exact features of random scenes drawn from the config ranges."""
    seed = config.run.seed if seed is None else seed
    d = config.ddnn
    scenes = generate_dataset(config, seed=seed + 7919, n=d.n_rows)
    x, y = synthetic_features(scenes)
    noise = NoiseSpec(d.noise_angle, d.noise_dt, d.noise_h)
    params = TrainParams(epochs=d.epochs, batch_size=d.batch_size, lr=d.lr, lr_decay=d.lr_decay)
    return ddnn_train((x, y), noise, params, seed=seed)


def _run_one(args):
    scene, config, model = args
    timings: dict = {}
    row = run_pipeline(scene, config, model, timings=timings)
    return row, timings


def run_scenes(scenes, config: ExperimentConfig, model: MlpModel | None = None) -> tuple[list, list]:
    """Rows and per-scene timings, in scene order regardless of worker count."""
    jobs = [(s, config, model) for s in scenes]
    n = worker_count()
    if n == 1 or len(jobs) <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_one, jobs))
    return [r for r, _ in results], [t for _, t in results]


def t60_bucket(t60: float, width: float) -> str:
    lo = math.floor(t60 / width + 1e-9) * width
    return f"{lo:.2f}-{lo + width:.2f}"


def evaluate(rows: list, config: ExperimentConfig | None = None) -> dict:
    """Aggregate report rows, overall and per T60 bucket."""
    if not rows:
        raise ValueError("no rows to evaluate")
    config = config or ExperimentConfig()
    groups: dict = {"all": list(rows)}
    for r in rows:
        if r.get("scene"):
            groups.setdefault(t60_bucket(r["scene"]["t60"], config.metrics.t60_bucket), []).append(r)
    return {name: _aggregate(g, config) for name, g in sorted(groups.items())}


def _aggregate(rows, config) -> dict:
    tau_err, tau_ok = [], []
    dist_err = []
    planes_d, planes_t, n_truth, n_det = [], [], 0, 0
    floor_hits = 0
    for r in rows:
        for t in r.get("tdoa") or []:
            if "oracle_tau" in t:
                tau_err.append(t["error"] if t["error"] is not None else float("nan"))
                tau_ok.append(t["valid"])
        src = (r.get("source") or {}).get(config.method.distance_method)
        if src is not None and "error" in src and isinstance(src["error"], float):
            dist_err.append(src["error"])
        metrics = (r.get("room") or {}).get("metrics")
        if metrics:
            n_truth += metrics["n_truth"]
            for p in metrics["pairs"]:
                if p["detected"]:
                    n_det += 1
                    planes_d.append(p["distance_diff"])
                    planes_t.append(p["normal_angle"])
                    floor_hits += p["label"] == "floor"
    tdoa = summarize(tau_err, tau_ok, config.metrics.tdoa_gate) if tau_err else None
    dist = summarize(dist_err) if dist_err else None
    return {
        "n_scenes": len(rows),
        "n_failed": sum(r.get("error") is not None for r in rows),
        "tdoa": None if tdoa is None else tdoa.to_dict(),
        "distance": None if dist is None else dist.to_dict(),
        "boundaries": {
            "n_truth": n_truth,
            "n_detected": n_det,
            "r_dect": n_det / n_truth if n_truth else None,
            "distance": summarize(planes_d).to_dict() if planes_d else None,
            "angle": summarize(planes_t).to_dict() if planes_t else None,
            "floor_detected": floor_hits,
        },
    }


def report_json(rows, aggregate, config: ExperimentConfig | None = None) -> str:
    """Canonical JSON text for a run (sorted keys, fixed float rounding).

    With ``config`` the settings are embedded as INI text so the aggregates
    can be recomputed later under the same gates and method.
    """
    report = {"rows": rows, "aggregate": aggregate}
    if config is not None:
        report["config"] = config.to_text()
    return json.dumps(_r(report), sort_keys=True, indent=1)
