"""Phase-mode beam extraction and GCC-PHAT delay estimation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .doa import DEFAULT_BAND
from .encode import HoaFrames, istft, sh_basis
from .geometry import Direction


@dataclass
class BeamSignal:
    samples: np.ndarray
    sample_rate: int
    direction: Direction | None = None
    source_id: str | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("beam signal contains non-finite samples")

    def frame(self, index: int, frame_len: int) -> "BeamSignal":
        seg = self.samples[index * frame_len : (index + 1) * frame_len]
        return BeamSignal(seg, self.sample_rate, self.direction, self.source_id)


def extract_beam(hoa: HoaFrames, direction: Direction) -> BeamSignal:
    """Max-WNG phase-mode beam ``w = Y(direction)``, scaled per bin to unit look-direction gain."""
    w = sh_basis(hoa.order, direction)
    spec = (hoa.coeffs @ w) * hoa.beam_gain()[None, :]
    cfg = hoa.config
    y = istft(spec, hoa.n_samples, cfg.nfft, cfg.hop)
    return BeamSignal(y, hoa.sample_rate, direction)


@dataclass
class CorrelationFunction:
    lags: np.ndarray
    values: np.ndarray
    sample_rate: int

    def at(self, lag: int) -> float:
        return float(self.values[lag - self.lags[0]])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag_samples", "value"])
            for lag, v in zip(self.lags, self.values):
                w.writerow([int(lag), f"{v:.8f}"])


def gcc_phat(x0: BeamSignal, xi: BeamSignal, band=DEFAULT_BAND, max_lag: int | None = None) -> CorrelationFunction:
    """PHAT-weighted cross-correlation; positive lag means ``xi`` lags ``x0``.

    Values are scaled so that a perfectly coherent in-band pair peaks at 1.
    """
    a = np.asarray(getattr(x0, "samples", x0), dtype=float)
    b = np.asarray(getattr(xi, "samples", xi), dtype=float)
    fs = getattr(x0, "sample_rate", 16000)
    if a.shape != b.shape:
        raise ValueError("gcc_phat needs equal-length inputs")
    if not np.any(a) or not np.any(b):
        raise ValueError("gcc_phat of an all-zero signal")
    n = a.size
    if max_lag is None:
        max_lag = n - 1
    if n < 2 * max_lag and max_lag != n - 1:
        raise ValueError("signals shorter than twice the requested lag range")
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    cross = np.fft.rfft(a, nfft) * np.conj(np.fft.rfft(b, nfft))
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    mag = np.abs(cross)
    keep = (freqs >= band[0]) & (freqs <= band[1]) & (mag > 0)
    if not keep.any():
        raise ValueError("no usable bins in the PHAT band")
    white = np.zeros_like(cross)
    white[keep] = cross[keep] / mag[keep]
    r = np.fft.irfft(white, nfft)
    r /= 2.0 * keep.sum() / nfft
    lags = np.arange(-max_lag, max_lag + 1)
    # irfft of X0 conj(Xi) peaks at minus the delay of xi
    values = r[(-lags) % nfft]
    return CorrelationFunction(lags, values, fs)


@dataclass(frozen=True)
class TdoaEstimate:
    tau: float
    lag: int
    peak: float
    valid: bool

    def to_dict(self) -> dict:
        return {"tau": self.tau, "lag": self.lag, "peak": self.peak, "valid": self.valid}


def estimate_tdoa(corr: CorrelationFunction, threshold=0.3, exclusion=10, max_delay=0.05) -> TdoaEstimate:
    """Largest correlation peak at a positive lag beyond the exclusion zone."""
    fs = corr.sample_rate
    max_lag = int(round(max_delay * fs))
    if corr.lags[-1] < max_lag:
        raise ValueError("correlation does not cover the maximum delay")
    sel = (corr.lags > exclusion) & (corr.lags <= max_lag)
    lags, vals = corr.lags[sel], corr.values[sel]
    i = int(np.argmax(vals))
    lag = int(lags[i])
    peak = float(vals[i])
    return TdoaEstimate(lag / fs, lag, peak, peak >= threshold)


def frame_tdoas(direct: BeamSignal, reflected: BeamSignal, frame_len: int, frames, band=DEFAULT_BAND,
                threshold=0.3, exclusion=10, max_delay=0.05) -> list[TdoaEstimate]:
    """Per-analysis-frame estimates for the given frame indices."""
    max_lag = int(round(max_delay * direct.sample_rate))
    out = []
    for f in frames:
        a, b = direct.frame(f, frame_len), reflected.frame(f, frame_len)
        if not np.any(a.samples) or not np.any(b.samples):
            out.append(TdoaEstimate(float("nan"), 0, 0.0, False))
            continue
        corr = gcc_phat(a, b, band, max_lag)
        out.append(estimate_tdoa(corr, threshold, exclusion, max_delay))
    return out


def median_tdoa(estimates) -> float | None:
    """Median of the valid per-frame delays (None if none are valid)."""
    taus = [e.tau for e in estimates if e.valid]
    return float(np.median(taus)) if taus else None
