"""Image-source simulation of a rigid spherical array in a shoebox room.

Each image path is rendered as a plane wave on the rigid sphere: the
pressure at capsule ``q`` is ``sum_nm b_n(ka) Y_nm(capsule_q) Y_nm(path)``
times the path's gain, spreading loss and (fractional) delay. Delays are
phase ramps on a long FFT grid, so the resulting array impulse responses
are sample-accurate; the source is then convolved with them block-wise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .arrays import ArraySpec
from .encode import mode_strength_table, sh_matrix, sh_orders
from .geometry import RoomScene, direction_of

SABINE = 0.161


@dataclass
class MultichannelSignal:
    data: np.ndarray  # (channels, samples)
    sample_rate: int

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if not np.all(np.isfinite(self.data)):
            raise ValueError("signal contains non-finite samples")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ImagePath:
    position: np.ndarray
    order: int
    gain: float
    delay: float


def mean_absorption(scene: RoomScene) -> float:
    lx, ly, lz = scene.dims
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    if scene.t60 <= 0:
        raise ValueError("t60 must be positive")
    return SABINE * volume / (surface * scene.t60)


def absorption_from_t60(scene: RoomScene) -> tuple:
    """Uniform Sabine absorption turned into six face reflection coefficients."""
    alpha = mean_absorption(scene)
    if alpha >= 1.0:
        raise ValueError(f"room too small for T60={scene.t60} s (mean absorption {alpha:.3f} >= 1)")
    return (math.sqrt(1.0 - alpha),) * 6


def reflection_coeffs(scene: RoomScene) -> tuple:
    if scene.reflection_coeffs is not None:
        return scene.reflection_coeffs
    return absorption_from_t60(scene)


def _axis_images(src, length, max_order):
    # image coordinate (1 - 2q) * src + 2 n L; hits on the low wall |n - q|, high wall |n|
    rows = []
    for n in range(-max_order, max_order + 1):
        for q in (0, 1):
            lo, hi = abs(n - q), abs(n)
            if lo + hi <= max_order:
                rows.append(((1 - 2 * q) * src + 2 * n * length, lo, hi))
    return rows


def image_paths(scene: RoomScene, max_order: int) -> list[ImagePath]:
    """All image sources up to ``max_order`` reflections, direct path first.

    Positions are in the room frame; delays are measured at the array centre.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    beta = reflection_coeffs(scene)
    # face order: floor, ceiling, x=0, x=Lx, y=0, y=Ly
    bx0, bx1, by0, by1, bz0, bz1 = beta[2], beta[3], beta[4], beta[5], beta[0], beta[1]
    axes = [
        _axis_images(scene.source_pos[i], scene.dims[i], max_order) for i in range(3)
    ]
    paths = []
    for x, ax0, ax1 in axes[0]:
        ox = ax0 + ax1
        for y, ay0, ay1 in axes[1]:
            oxy = ox + ay0 + ay1
            if oxy > max_order:
                continue
            for z, az0, az1 in axes[2]:
                order = oxy + az0 + az1
                if order > max_order:
                    continue
                gain = bx0**ax0 * bx1**ax1 * by0**ay0 * by1**ay1 * bz0**az0 * bz1**az1
                pos = np.array([x, y, z])
                dist = float(np.linalg.norm(pos - scene.array_pos))
                paths.append(ImagePath(pos, order, float(gain), dist / scene.sound_speed))
    paths.sort(key=lambda p: (p.order, p.delay))
    return paths


def simulation_order(array: ArraySpec, c: float) -> int:
    """SH order needed to represent the rigid-sphere field up to Nyquist."""
    ka = math.pi * array.sample_rate * array.radius / c
    return int(math.ceil(ka)) + 8


def array_impulse_responses(paths, scene: RoomScene, array: ArraySpec, sim_order=None) -> np.ndarray:
    """Impulse responses from the source to every capsule, shape (Q, L)."""
    fs = array.sample_rate
    c = scene.sound_speed
    if sim_order is None:
        sim_order = simulation_order(array, c)
    rel = np.array([p.position for p in paths]) - scene.array_pos
    dist = np.linalg.norm(rel, axis=1)
    if np.any(dist == 0):
        raise ValueError("an image source coincides with the array centre")
    delays = dist / c
    weights = np.array([p.gain for p in paths]) / dist
    dirs = [direction_of(v) for v in rel]
    y_paths = sh_matrix(sim_order, [d.azimuth for d in dirs], [d.elevation for d in dirs])
    y_caps = sh_matrix(sim_order, array.capsule_dirs[:, 0], array.capsule_dirs[:, 1])

    length = int(math.ceil(delays.max() * fs)) + 512
    nfft = 1 << int(math.ceil(math.log2(length + 512)))
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    b_acn = mode_strength_table(sim_order, freqs, array.radius, c)[:, sh_orders(sim_order)]
    weighted = weights[:, None] * y_paths  # (P, K)
    spec = np.empty((freqs.size, array.n_capsules), dtype=complex)
    chunk = 256
    for start in range(0, freqs.size, chunk):
        f = freqs[start : start + chunk]
        ramps = np.exp(-2j * np.pi * f[:, None] * delays[None, :])  # (F, P)
        sh_field = ramps @ weighted  # (F, K)
        spec[start : start + chunk] = (sh_field * b_acn[start : start + chunk]) @ y_caps.T
    irs = np.fft.irfft(spec, n=nfft, axis=0).T
    return irs[:, :length]


def render_array(
    scene: RoomScene,
    source_signal,
    array: ArraySpec = None,
    max_order: int = 10,
    snr_db: float | None = 30.0,
    seed: int = 0,
    sim_order: int | None = None,
) -> MultichannelSignal:
    """Render the array recording of ``source_signal`` played in ``scene``.

    Sensor noise is white Gaussian at ``snr_db`` below the mean direct-path
    channel power; ``snr_db=None`` disables it.
    """
    array = array or ArraySpec()
    src = np.asarray(source_signal, dtype=float).ravel()
    if src.size == 0:
        raise ValueError("empty source signal")
    paths = image_paths(scene, max_order)
    irs = array_impulse_responses(paths, scene, array, sim_order)
    mics = sps.oaconvolve(src[None, :], irs, axes=1)[:, : src.size]
    if snr_db is not None:
        direct_ir = array_impulse_responses(paths[:1], scene, array, sim_order)
        direct = sps.oaconvolve(src[None, :], direct_ir, axes=1)[:, : src.size]
        power = float(np.mean(direct**2))
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(mics.shape)
        mics = mics + noise * math.sqrt(power / 10 ** (snr_db / 10))
    return MultichannelSignal(mics, array.sample_rate)


# ---------------------------------------------------------------------------
# source signals


def white_noise(n_samples: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(n_samples)


def speech_shaped_noise(n_samples: int, sample_rate: int = 16000, seed: int = 0, modulate: bool = True):
    """Noise with a speech-like long-term spectrum and optional syllabic envelope."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_samples)
    sos_hp = sps.butter(2, 100, "highpass", fs=sample_rate, output="sos")
    sos_lp = sps.butter(1, 500, "lowpass", fs=sample_rate, output="sos")
    x = sps.sosfilt(sos_lp, sps.sosfilt(sos_hp, x))
    if modulate:
        t = np.arange(n_samples) / sample_rate
        x *= 0.6 + 0.4 * np.sin(2 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi))
    return x / np.std(x)


# ---------------------------------------------------------------------------
# WAV I/O: 32-bit float PCM, channel order = capsule index order


def write_wav(path, sig: MultichannelSignal) -> None:
    wavfile.write(str(path), int(sig.sample_rate), sig.data.T.astype(np.float32))


def read_wav(path) -> MultichannelSignal:
    rate, data = wavfile.read(str(Path(path)))
    data = np.asarray(data)
    if data.dtype.kind == "i":
        data = data / float(np.iinfo(data.dtype).max)
    if data.ndim == 1:
        data = data[:, None]
    return MultichannelSignal(data.T.astype(float), int(rate))


def read_mono(path, sample_rate=16000) -> np.ndarray:
    sig = read_wav(path)
    if sig.sample_rate != sample_rate:
        raise ValueError(f"{path}: expected {sample_rate} Hz, got {sig.sample_rate}")
    return sig.data.mean(axis=0)
