"""Experiment configuration stored as a sectioned INI file."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .arrays import ArraySpec, read_layout
from .encode import StftConfig

ROOM_MIN = (3.0, 3.0, 2.0)
ROOM_MAX = (10.0, 10.0, 4.0)
T60_RANGE = (0.3, 1.0)


@dataclass
class SceneSection:
    room_min: tuple = ROOM_MIN
    room_max: tuple = ROOM_MAX
    t60_min: float = T60_RANGE[0]
    t60_max: float = T60_RANGE[1]
    clearance: float = 0.5
    duration: float = 10.0
    max_order: int = 10
    snr_db: float = 30.0
    signal: str = "white"


@dataclass
class ArraySection:
    layout: str = ""
    radius: float = 0.042
    order: int = 4
    sample_rate: int = 16000


@dataclass
class AnalysisSection:
    band_lo: float = 500.0
    band_hi: float = 4000.0
    nfft: int = 1024
    hop: int = 512
    frame_len: int = 5000
    wng_db: float = 20.0
    grid_step: float = 3.0
    loading: float = 1e-3
    beta_db: float = -3.0
    min_separation: float = 6.0
    sigma: float = 0.3
    exclusion: int = 10
    max_delay: float = 0.05
    vad_ratio: float = 0.1
    floor_max_elevation: float = -5.0


@dataclass
class MethodSection:
    distance_method: str = "dnn"
    oracle_doa: bool = False
    oracle_tdoa: bool = False
    model: str = ""


@dataclass
class MetricsSection:
    theta_gate: float = 15.0
    distance_gate: float = 0.5
    tdoa_gate: float = 1e-3
    t60_bucket: float = 0.1


@dataclass
class DdnnSection:
    n_rows: int = 8000
    epochs: int = 150
    batch_size: int = 128
    lr: float = 2e-3
    lr_decay: float = 0.98
    noise_angle: float = 2.0
    noise_dt: float = 0.5e-3
    noise_h: float = 0.01


@dataclass
class RunSection:
    seed: int = 0
    n_scenes: int = 20
    output: str = "out"


SECTIONS = {
    "scene": SceneSection,
    "array": ArraySection,
    "analysis": AnalysisSection,
    "method": MethodSection,
    "metrics": MetricsSection,
    "ddnn": DdnnSection,
    "run": RunSection,
}


@dataclass
class ExperimentConfig:
    scene: SceneSection = field(default_factory=SceneSection)
    array: ArraySection = field(default_factory=ArraySection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    method: MethodSection = field(default_factory=MethodSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    ddnn: DdnnSection = field(default_factory=DdnnSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "ExperimentConfig":
        s = self.scene
        if len(s.room_min) != 3 or len(s.room_max) != 3:
            raise ValueError("room ranges need three values")
        if any(lo <= 0 or lo > hi for lo, hi in zip(s.room_min, s.room_max)):
            raise ValueError("room ranges must satisfy 0 < min <= max")
        if not 0 < s.t60_min <= s.t60_max:
            raise ValueError("T60 range must satisfy 0 < min <= max")
        if s.clearance < 0 or s.duration <= 0 or s.max_order < 0:
            raise ValueError("clearance, duration and max_order must be non-negative")
        if s.signal not in ("white", "speech"):
            raise ValueError(f"unknown source signal {s.signal!r}")
        a = self.analysis
        positive = [a.band_lo, a.band_hi, a.nfft, a.hop, a.frame_len, a.grid_step, a.loading, a.sigma,
                    a.exclusion, a.max_delay, a.vad_ratio, a.min_separation]
        if any(v <= 0 for v in positive) or a.band_lo >= a.band_hi:
            raise ValueError("analysis thresholds must be positive and the band non-empty")
        if a.beta_db >= 0:
            raise ValueError("beta_db must be negative (dB below the maximum)")
        m = self.metrics
        if min(m.theta_gate, m.distance_gate, m.tdoa_gate, m.t60_bucket) <= 0:
            raise ValueError("metric gates must be positive")
        if self.method.distance_method not in ("height", "tdoa", "dnn"):
            raise ValueError(f"unknown distance method {self.method.distance_method!r}")
        return self

    # -- derived objects ---------------------------------------------------

    def array_spec(self) -> ArraySpec:
        kw = dict(radius=self.array.radius, order=self.array.order, sample_rate=self.array.sample_rate)
        if self.array.layout:
            return ArraySpec(read_layout(self.array.layout), **kw)
        return ArraySpec(**kw)

    def stft_config(self) -> StftConfig:
        a = self.analysis
        return StftConfig(nfft=a.nfft, hop=a.hop, frame_len=a.frame_len, wng_db=a.wng_db)

    @property
    def band(self) -> tuple:
        return (self.analysis.band_lo, self.analysis.band_hi)

    # -- I/O ---------------------------------------------------------------

    def to_parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser()
        for name in SECTIONS:
            sec = getattr(self, name)
            cp[name] = {f.name: _format(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        return cp

    def to_text(self) -> str:
        buf = io.StringIO()
        self.to_parser().write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser) -> "ExperimentConfig":
        cfg = cls()
        for name in cp.sections():
            if name not in SECTIONS:
                raise ValueError(f"unknown config section [{name}]")
            sec = getattr(cfg, name)
            for key, raw in cp[name].items():
                set_value(sec, key, raw, where=f"[{name}]")
        return cfg.validate()

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text, source=source)
        return cls.from_parser(cp)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), str(path))

    def override(self, dotted: str, raw: str) -> None:
        """Apply ``section.key=value`` style overrides (``key`` alone if unambiguous)."""
        if "." in dotted:
            name, key = dotted.split(".", 1)
            if name not in SECTIONS:
                raise ValueError(f"unknown config section {name!r}")
            set_value(getattr(self, name), key, raw, where=name)
            return
        owners = [n for n, c in SECTIONS.items() if dotted in {f.name for f in dataclasses.fields(c)}]
        if len(owners) != 1:
            raise ValueError(f"config key {dotted!r} is unknown or ambiguous")
        set_value(getattr(self, owners[0]), dotted, raw, where=owners[0])


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def set_value(section, key: str, raw, where: str = "") -> None:
    fields = {f.name: f for f in dataclasses.fields(section)}
    if key not in fields:
        raise ValueError(f"unknown config key {key!r} in {where}")
    current = getattr(section, key)
    if not isinstance(raw, str):
        value = raw
    elif isinstance(current, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{where} {key}: expected a boolean, got {raw!r}")
        value = low in ("true", "1", "yes")
    elif isinstance(current, tuple):
        value = tuple(float(v) for v in raw.split(","))
    elif isinstance(current, int):
        value = int(raw)
    elif isinstance(current, float):
        value = float(raw)
    else:
        value = raw.strip()
    setattr(section, key, value)
