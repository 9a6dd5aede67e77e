"""Command-line entry point: ``echolocate <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import SECTIONS, ExperimentConfig, set_value
from .dataset import energy_vad, generate_dataset
from .doa import DirectionGrid, DoaSet, covariance, pick_peaks, sps_mvdr
from .encode import encode_hoa, write_hoa
from .geometry import RoomScene, room_boundaries
from .mlp import MlpModel
from .pipeline import (
    evaluate,
    render_scene,
    report_json,
    run_pipeline,
    run_scenes,
    scene_seed,
    train_default_model,
)
from .room_infer import infer_room, match_boundaries
from .simulator import read_wav, write_wav
from .source_loc import LocalizationFeatures, SourceEstimate, estimate_source, select_floor_reflection
from .tdoa import TdoaEstimate, extract_beam, frame_tdoas, gcc_phat, median_tdoa


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="INI file with experiment settings")
    for section, cls in SECTIONS.items():
        g = p.add_argument_group(f"[{section}]")
        for f in dataclasses.fields(cls):
            flag = "--" + f.name.replace("_", "-")
            dest = f"cfg__{section}__{f.name}"
            if f.type in ("bool", bool):
                g.add_argument(flag, dest=dest, action="store_const", const="true", default=None)
            else:
                g.add_argument(flag, dest=dest, default=None, metavar=f.name.upper())
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key")
    return p


def build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for key, value in vars(args).items():
        if key.startswith("cfg__") and value is not None:
            _, section, name = key.split("__", 2)
            set_value(getattr(cfg, section), name, value, where=f"--{name}")
    for item in args.overrides:
        if "=" not in item:
            raise CliError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.override(k.strip(), v.strip())
    return cfg.validate()


def _load_model(cfg: ExperimentConfig, required: bool) -> MlpModel | None:
    if cfg.method.model:
        return MlpModel.load(cfg.method.model)
    if required:
        raise CliError("distance method 'dnn' needs --model (train one with `echolocate train-ddnn`)")
    return None


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _recording(cfg, path):
    sig = read_wav(path)
    spec = cfg.array_spec()
    if sig.n_channels != spec.n_capsules or sig.sample_rate != spec.sample_rate:
        raise CliError(f"{path}: {sig.n_channels} channels at {sig.sample_rate} Hz; "
                       f"expected {spec.n_capsules} at {spec.sample_rate} Hz")
    return sig


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, cfg):
    out = Path(args.out or cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    scenes = generate_dataset(cfg)
    manifest = []
    for sc in scenes:
        sid = sc.meta["id"]
        sig = render_scene(sc, cfg, scene_seed(sc, cfg.run.seed))
        write_wav(out / f"{sid}.wav", sig)
        _write_json(out / f"{sid}.json", sc.to_dict())
        manifest.append({"id": sid, "split": sc.meta["split"], "wav": f"{sid}.wav", "truth": f"{sid}.json"})
    _write_json(out / "scenes.json", manifest)
    print(f"wrote {len(scenes)} scenes to {out}")


def cmd_encode(args, cfg):
    sig = _recording(cfg, args.wav)
    hoa = encode_hoa(sig, cfg.array_spec(), cfg.stft_config())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_hoa(args.out, hoa)
    print(f"wrote {hoa.coeffs.shape} eigen-beam frames to {args.out}")


def _doa_from_wav(cfg, path):
    sig = _recording(cfg, path)
    a = cfg.analysis
    hoa = encode_hoa(sig, cfg.array_spec(), cfg.stft_config())
    active = energy_vad(sig, a.frame_len, a.vad_ratio)
    if not active.any():
        raise CliError("no active frames")
    mask = np.isin(hoa.block_index, np.flatnonzero(active))
    sps = sps_mvdr(covariance(hoa, cfg.band, mask), DirectionGrid(a.grid_step), a.loading)
    return hoa, active, sps


def cmd_doa(args, cfg):
    _, _, sps = _doa_from_wav(cfg, args.wav)
    doas = pick_peaks(sps, cfg.analysis.beta_db, cfg.analysis.min_separation)
    if args.csv:
        sps.to_csv(args.csv)
    _write_json(args.out, doas.to_dict())
    print(f"direct {doas.direct}; {len(doas.reflections)} reflections")


def cmd_tdoa(args, cfg):
    a = cfg.analysis
    sig = _recording(cfg, args.wav)
    hoa = encode_hoa(sig, cfg.array_spec(), cfg.stft_config())
    active = energy_vad(sig, a.frame_len, a.vad_ratio)
    doas = DoaSet.from_dict(_read_json(args.doa))
    direct = extract_beam(hoa, doas.direct)
    frames = np.flatnonzero(active)
    rows = []
    for i, d in enumerate(doas.reflections):
        beam = extract_beam(hoa, d)
        per = frame_tdoas(direct, beam, a.frame_len, frames, cfg.band, a.sigma, a.exclusion, a.max_delay)
        tau = median_tdoa(per)
        rows.append({"direction": d.to_dict(), "tau": tau, "valid": tau is not None,
                     "n_valid_frames": sum(e.valid for e in per)})
        if args.corr_dir and frames.size:
            Path(args.corr_dir).mkdir(parents=True, exist_ok=True)
            f = int(frames[0])
            corr = gcc_phat(direct.frame(f, a.frame_len), beam.frame(f, a.frame_len), cfg.band,
                            int(round(a.max_delay * hoa.sample_rate)))
            corr.to_csv(Path(args.corr_dir) / f"corr_reflection{i}.csv")
    _write_json(args.out, rows)
    print(f"{sum(r['valid'] for r in rows)}/{len(rows)} reflections with a valid delay")


def _taus_from_json(rows):
    out = []
    for r in rows:
        tau = r.get("tau")
        out.append(TdoaEstimate(tau if tau is not None else float("nan"), 0, 0.0, bool(r.get("valid"))))
    return out


def cmd_localize(args, cfg):
    doas = DoaSet.from_dict(_read_json(args.doa))
    taus = _taus_from_json(_read_json(args.tdoa))
    if len(taus) != len(doas.reflections):
        raise CliError("DOA and TDOA files disagree on the number of reflections")
    idx = select_floor_reflection(doas, taus, h=args.height, max_elevation=cfg.analysis.floor_max_elevation)
    feats = LocalizationFeatures(args.height, doas.direct.elevation, -doas.reflections[idx].elevation,
                                 taus[idx].tau, doas.direct)
    model = _load_model(cfg, cfg.method.distance_method == "dnn")
    est = estimate_source(feats, cfg.method.distance_method, model)
    _write_json(args.out, {**est.to_dict(), "floor_index": idx})
    print(f"source at {est.d1:.3f} m ({est.method})")


def cmd_infer(args, cfg):
    src = _read_json(args.source)
    source = SourceEstimate(src["d1"], np.asarray(src["position"], dtype=float), src["method"], src.get("clamped", False))
    doas = DoaSet.from_dict(_read_json(args.doa))
    taus = _taus_from_json(_read_json(args.tdoa))
    refl = [(i, d, t.tau) for i, (d, t) in enumerate(zip(doas.reflections, taus)) if t.valid]
    room = infer_room(source, refl)
    if args.truth:
        scene = RoomScene.from_dict(_read_json(args.truth))
        gates = {"theta": cfg.metrics.theta_gate, "distance": cfg.metrics.distance_gate}
        room.metrics = match_boundaries(room.boundaries, room_boundaries(scene, "array"), gates)
    _write_json(args.out, room.to_dict())
    print(f"{len(room.boundaries)} planes")


def cmd_train_ddnn(args, cfg):
    model = train_default_model(cfg)
    model.save(args.out)
    hist = model.history
    _write_json(Path(args.out).with_suffix(".history.json"), hist)
    print(f"trained D-DNN: final train loss {hist['train'][-1]:.5f}, val loss {hist['val'][-1]:.5f}")


def cmd_run(args, cfg):
    out = Path(args.out or cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    need_model = cfg.method.distance_method == "dnn"
    model = _load_model(cfg, False)
    if model is None and need_model:
        model = train_default_model(cfg)
        model.save(out / "model.bin")
    if args.wav:
        if args.height is None:
            raise CliError("--height (array height above the floor, m) is required with --wav")
        sig = _recording(cfg, args.wav)
        timings: dict = {}
        rows = [run_pipeline(sig, cfg, model, array_height=args.height, timings=timings)]
        all_timings = [timings]
    else:
        scenes = generate_dataset(cfg)
        rows, all_timings = run_scenes(scenes, cfg, model)
    agg = evaluate(rows, cfg)
    (out / "report.json").write_text(report_json(rows, agg, cfg) + "\n")
    _write_json(out / "timings.json", all_timings)
    failed = sum(r["error"] is not None for r in rows)
    print(f"{len(rows)} scenes, {failed} with a failed stage; report in {out / 'report.json'}")


def _report_config(report, cfg):
    """Settings stored with a report take precedence, so its aggregates are reproducible."""
    text = report.get("config")
    return ExperimentConfig.from_text(text, "report") if text else cfg


def cmd_evaluate(args, cfg):
    report = _read_json(args.report)
    rows = report["rows"]
    cfg = _report_config(report, cfg)
    agg = json.loads(report_json(rows, evaluate(rows, cfg)))["aggregate"]
    if "aggregate" in report and report["aggregate"] != agg:
        raise CliError("aggregates in the report do not match its rows")
    if args.out:
        _write_json(args.out, agg)
    overall = agg["all"]
    print(json.dumps(overall, indent=1, sort_keys=True))


def cmd_emit_plots(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = _read_json(args.report)
    rows = report["rows"]
    cfg = _report_config(report, cfg)
    with open(out / "scene_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "t60", "distance_error", "r_dect", "mean_abs_plane_distance", "mean_plane_angle"])
        for r in rows:
            sc = r.get("scene") or {}
            src = (r.get("source") or {}).get(cfg.method.distance_method) or {}
            m = (r.get("room") or {}).get("metrics") or {}
            dist = (m.get("distance") or {}).get("mean")
            ang = (m.get("angle") or {}).get("mean")
            w.writerow([(sc.get("meta") or {}).get("id", ""), sc.get("t60", ""), src.get("error", ""),
                        m.get("r_dect", ""), "" if dist is None else dist, "" if ang is None else ang])
    agg = json.loads(report_json(rows, evaluate(rows, cfg)))["aggregate"]
    with open(out / "error_vs_t60.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t60_bucket", "n_scenes", "tdoa_mean", "tdoa_sd", "tdoa_r_dect", "source_mean", "source_sd",
                    "boundary_r_dect", "boundary_distance_mean", "boundary_angle_mean"])
        for name, g in agg.items():
            if name == "all":
                continue
            t = g["tdoa"] or {}
            s = g["distance"] or {}
            b = g["boundaries"]
            w.writerow([name, g["n_scenes"], t.get("mean"), t.get("sd"), t.get("rate"), s.get("mean"), s.get("sd"),
                        b["r_dect"], (b["distance"] or {}).get("mean"), (b["angle"] or {}).get("mean")])
    if args.wav:
        hoa, active, sps = _doa_from_wav(cfg, args.wav)
        sps.to_csv(out / "sps.csv")
        doas = pick_peaks(sps, cfg.analysis.beta_db, cfg.analysis.min_separation)
        a = cfg.analysis
        direct = extract_beam(hoa, doas.direct)
        f = int(np.flatnonzero(active)[0])
        for i, d in enumerate(doas.reflections):
            corr = gcc_phat(direct.frame(f, a.frame_len), extract_beam(hoa, d).frame(f, a.frame_len), cfg.band,
                            int(round(a.max_delay * hoa.sample_rate)))
            corr.to_csv(out / f"corr_reflection{i}.csv")
    print(f"plot data in {out}")


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    p = argparse.ArgumentParser(prog="echolocate", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[parent], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "render random scenes to WAV plus ground-truth JSON")
    sp.add_argument("--out", type=Path)
    sp = add("encode", cmd_encode, "dump eigen-beam STFT coefficients of a recording")
    sp.add_argument("--wav", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp = add("doa", cmd_doa, "EB-MVDR spectrum and peak directions")
    sp.add_argument("--wav", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--csv", type=Path, help="write the spatial spectrum here")
    sp = add("tdoa", cmd_tdoa, "reflection delays for the directions in a DOA file")
    sp.add_argument("--wav", required=True, type=Path)
    sp.add_argument("--doa", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--corr-dir", type=Path, help="write correlation CSVs here")
    sp = add("localize", cmd_localize, "source distance from DOA and TDOA files")
    sp.add_argument("--doa", required=True, type=Path)
    sp.add_argument("--tdoa", required=True, type=Path)
    sp.add_argument("--height", required=True, type=float, help="array height above the floor (m)")
    sp.add_argument("--out", required=True, type=Path)
    sp = add("infer", cmd_infer, "boundary planes from source, DOA and TDOA files")
    sp.add_argument("--source", required=True, type=Path)
    sp.add_argument("--doa", required=True, type=Path)
    sp.add_argument("--tdoa", required=True, type=Path)
    sp.add_argument("--truth", type=Path, help="scene JSON for metrics")
    sp.add_argument("--out", required=True, type=Path)
    sp = add("run", cmd_run, "end-to-end pipeline over random scenes or one recording")
    sp.add_argument("--out", type=Path)
    sp.add_argument("--wav", type=Path)
    sp.add_argument("--height", type=float)
    sp = add("train-ddnn", cmd_train_ddnn, "train the distance regressor on synthetic geometry")
    sp.add_argument("--out", required=True, type=Path)
    sp = add("evaluate", cmd_evaluate, "recompute and check the aggregates of a report")
    sp.add_argument("--report", required=True, type=Path)
    sp.add_argument("--out", type=Path)
    sp = add("emit-plots", cmd_emit_plots, "CSV plot data from a report (and optionally a recording)")
    sp.add_argument("--report", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--wav", type=Path)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        args.func(args, cfg)
    except (CliError, ValueError, LookupError, OSError, KeyError, np.linalg.LinAlgError) as exc:
        print(f"echolocate {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
