"""Eigen-beam (HOA) encoding of rigid-sphere array signals.

Real spherical harmonics are fully normalised (orthonormal on the sphere),
without the Condon-Shortley phase, and stored in ACN order: coefficient
``(n, m)`` sits at index ``n**2 + n + m``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import lpmv

from .arrays import ArraySpec
from .bessel import spherical_hankel2_all, spherical_jn_all, spherical_jn_derivative_all
from .geometry import SPEED_OF_SOUND, Direction


def sh_matrix(order, azimuth_deg, elevation_deg) -> np.ndarray:
    """Real SH up to ``order`` at the given angles, shape ``(..., (order+1)**2)``."""
    az = np.radians(np.asarray(azimuth_deg, dtype=float))
    el = np.radians(np.asarray(elevation_deg, dtype=float))
    az, el = np.broadcast_arrays(az, el)
    x = np.sin(el)
    out = np.empty(az.shape + ((order + 1) ** 2,))
    for n in range(order + 1):
        for m in range(n + 1):
            norm = math.sqrt((2 * n + 1) / (4 * math.pi) * math.factorial(n - m) / math.factorial(n + m))
            # lpmv carries the Condon-Shortley phase; undo it
            p = (-1) ** m * norm * lpmv(m, n, x)
            if m == 0:
                out[..., n * n + n] = p
            else:
                out[..., n * n + n + m] = math.sqrt(2) * p * np.cos(m * az)
                out[..., n * n + n - m] = math.sqrt(2) * p * np.sin(m * az)
    return out


def sh_basis(order: int, direction: Direction) -> np.ndarray:
    if order < 0:
        raise ValueError("order must be >= 0")
    return sh_matrix(order, direction.azimuth, direction.elevation)


def sh_orders(order: int) -> np.ndarray:
    """Order ``n`` of every ACN coefficient."""
    return np.repeat(np.arange(order + 1), 2 * np.arange(order + 1) + 1)


def mode_strength_table(order, freqs, radius, c=SPEED_OF_SOUND) -> np.ndarray:
    """Rigid-sphere mode strength ``b_n`` at the sphere surface.

    ``b_n = 4 pi i^n [j_n(ka) - j_n'(ka) h_n(ka) / h_n'(ka)]``, returned with
    shape ``(len(freqs), order + 1)``. At f = 0 only the omni term survives.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    out = np.zeros((freqs.size, order + 1), dtype=complex)
    pos = freqs > 0
    ka = 2 * np.pi * freqs[pos] * radius / c
    j = spherical_jn_all(order, ka)
    jd = spherical_jn_derivative_all(order, ka)
    h = spherical_hankel2_all(order, ka)
    hd = spherical_hankel2_all(order, ka, derivative=True)
    n = np.arange(order + 1)
    out[pos] = 4 * np.pi * (1j**n) * (j - jd * h / hd)
    out[~pos, 0] = 4 * np.pi
    return out


def mode_strength(n, frequency, radius, c=SPEED_OF_SOUND) -> complex:
    if frequency <= 0:
        raise ValueError("frequency must be positive")
    return complex(mode_strength_table(n, [frequency], radius, c)[0, n])


def radial_equalizer(b, wng_db=20.0, reg=None):
    """Tikhonov inverse ``conj(b) / (|b|^2 + lam)``.

    With ``reg=None`` the loading is chosen per order and frequency as the
    smallest value keeping the equaliser gain within ``wng_db`` of the
    free-field level ``4 pi``. A scalar ``reg`` is applied everywhere.
    Returns ``(equalizer, lam)``.
    """
    mag = np.abs(b)
    if reg is None:
        gmax = 10 ** (wng_db / 20)
        lam = np.maximum(0.0, 4 * np.pi * mag / gmax - mag**2)
    else:
        lam = np.full(mag.shape, float(reg))
    den = mag**2 + lam
    eq = np.zeros_like(b)
    ok = den > 0
    eq[ok] = np.conj(b[ok]) / den[ok]
    return eq, lam


# ---------------------------------------------------------------------------
# STFT


def sqrt_hann(nfft: int) -> np.ndarray:
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(nfft) / nfft))


def stft(x, nfft=1024, hop=512) -> np.ndarray:
    """STFT of ``x`` along its last axis -> ``(..., frames, nfft//2+1)``.

    Frame ``t`` is centred on sample ``t * hop``.
    """
    if nfft != 2 * hop:
        raise ValueError("only 50% overlap is supported")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    n_frames = -(-n // hop) + 1  # every sample covered by two frames
    pad_end = (n_frames - 1) * hop + nfft - (n + hop)
    xp = np.concatenate(
        [np.zeros(x.shape[:-1] + (hop,)), x, np.zeros(x.shape[:-1] + (max(pad_end, 0),))], axis=-1
    )
    idx = np.arange(n_frames)[:, None] * hop + np.arange(nfft)[None, :]
    frames = xp[..., idx] * sqrt_hann(nfft)
    return np.fft.rfft(frames, axis=-1)


def istft(X, n_samples, nfft=1024, hop=512) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    X = np.asarray(X)
    frames = np.fft.irfft(X, n=nfft, axis=-1) * sqrt_hann(nfft)
    n_frames = frames.shape[-2]
    total = (n_frames - 1) * hop + nfft
    out = np.zeros(frames.shape[:-2] + (total,))
    for t in range(n_frames):
        out[..., t * hop : t * hop + nfft] += frames[..., t, :]
    return out[..., hop : hop + n_samples]


# ---------------------------------------------------------------------------
# encoder


@dataclass(frozen=True)
class StftConfig:
    nfft: int = 1024
    hop: int = 512
    frame_len: int = 5000
    wng_db: float = 20.0
    reg: float | None = None
    sound_speed: float = SPEED_OF_SOUND


@dataclass
class HoaFrames:
    """Eigen-beam STFT coefficients plus the equalised time-domain signals.

    ``coeffs`` has shape (stft_frames, bins, (N+1)**2); ``block_index`` maps
    each STFT frame to its analysis frame (``-1`` for a trailing partial
    frame); ``time`` holds the equalised EB signals, shape ((N+1)**2, n).
    """

    coeffs: np.ndarray
    freqs: np.ndarray
    block_index: np.ndarray
    eq_response: np.ndarray
    order: int
    sample_rate: int
    n_samples: int
    config: StftConfig
    time: np.ndarray | None = None

    @property
    def n_blocks(self) -> int:
        return self.n_samples // self.config.frame_len

    def band_mask(self, band) -> np.ndarray:
        lo, hi = band
        return (self.freqs >= lo) & (self.freqs <= hi)

    def beam_gain(self) -> np.ndarray:
        """Per-bin gain making the phase-mode beam distortionless."""
        n = np.arange(self.order + 1)
        resp = (self.eq_response * (2 * n + 1)).sum(axis=1) / (4 * np.pi)
        gain = np.zeros_like(resp)
        ok = np.abs(resp) > 1e-12
        gain[ok] = 1.0 / resp[ok]
        return gain


class HoaEncoder:
    """Encoder for one array geometry; tables are immutable after construction."""

    def __init__(self, array: ArraySpec, config: StftConfig = StftConfig()):
        self.array = array
        self.config = config
        y_caps = sh_matrix(array.order, array.capsule_dirs[:, 0], array.capsule_dirs[:, 1])
        cond = np.linalg.cond(y_caps)
        if cond > 1e6:
            raise ValueError(f"capsule grid is ill-conditioned (cond={cond:.3g})")
        self.y_caps = y_caps
        self.projector = np.linalg.pinv(y_caps)
        self.freqs = np.fft.rfftfreq(config.nfft, 1.0 / array.sample_rate)
        b = mode_strength_table(array.order, self.freqs, array.radius, config.sound_speed)
        eq, lam = radial_equalizer(b, config.wng_db, config.reg)
        self.mode_strength = b
        self.lam = lam
        self.equalizer = eq
        self.eq_response = np.real(b * eq)
        self._eq_acn = eq[:, sh_orders(array.order)]

    def encode(self, mics: np.ndarray, with_time: bool = True) -> HoaFrames:
        mics = np.asarray(mics, dtype=float)
        if mics.ndim != 2 or mics.shape[0] != self.array.n_capsules:
            raise ValueError(f"expected ({self.array.n_capsules}, n) microphone signals, got {mics.shape}")
        cfg = self.config
        spec = stft(mics, cfg.nfft, cfg.hop)  # (Q, T, F)
        coeffs = np.einsum("kq,qtf->tfk", self.projector, spec) * self._eq_acn[None]
        n = mics.shape[1]
        centers = np.arange(coeffs.shape[0]) * cfg.hop
        n_blocks = n // cfg.frame_len
        block = np.where(centers < n_blocks * cfg.frame_len, centers // cfg.frame_len, -1)
        time = istft(coeffs.transpose(2, 0, 1), n, cfg.nfft, cfg.hop) if with_time else None
        return HoaFrames(
            coeffs=coeffs,
            freqs=self.freqs,
            block_index=block.astype(int),
            eq_response=self.eq_response,
            order=self.array.order,
            sample_rate=self.array.sample_rate,
            n_samples=n,
            config=cfg,
            time=time,
        )


def encode_hoa(mics, array: ArraySpec, stft_config: StftConfig = StftConfig()) -> HoaFrames:
    data = getattr(mics, "data", mics)
    rate = getattr(mics, "sample_rate", array.sample_rate)
    if rate != array.sample_rate:
        raise ValueError(f"sample rate {rate} does not match array spec {array.sample_rate}")
    return HoaEncoder(array, stft_config).encode(data)


# ---------------------------------------------------------------------------
# binary dump: b"HOAF", uint32 N, frames, bins, then complex64 as LE float32 pairs

HOA_MAGIC = b"HOAF"


def write_hoa(path, hoa: HoaFrames) -> None:
    t, f, k = hoa.coeffs.shape
    data = np.empty((t, f, k, 2), dtype="<f4")
    data[..., 0] = hoa.coeffs.real
    data[..., 1] = hoa.coeffs.imag
    with open(path, "wb") as fh:
        fh.write(HOA_MAGIC + struct.pack("<III", hoa.order, t, f))
        fh.write(data.tobytes())


def read_hoa(path) -> tuple[int, np.ndarray]:
    """Return ``(order, coeffs)`` from a dump written by :func:`write_hoa`."""
    raw = Path(path).read_bytes()
    if raw[:4] != HOA_MAGIC:
        raise ValueError(f"{path}: not a HOA dump")
    order, t, f = struct.unpack("<III", raw[4:16])
    k = (order + 1) ** 2
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != t * f * k * 2:
        raise ValueError(f"{path}: truncated HOA dump")
    data = data.reshape(t, f, k, 2)
    return order, data[..., 0].astype(np.complex64) + 1j * data[..., 1].astype(np.complex64)
