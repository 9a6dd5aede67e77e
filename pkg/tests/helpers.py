"""Shared scene builders for the tests."""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

from echolocate.geometry import Direction, RoomScene, unit_vector
from echolocate.simulator import ImagePath, array_impulse_responses
from oracles import fibonacci_directions

FAR_SAMPLES = 1866
FAR = FAR_SAMPLES * 343.0 / 16000  # integer-sample bulk delay
BIG_ROOM = RoomScene((200.0, 200.0, 200.0), (150.0, 100.0, 100.0), (100.0, 100.0, 100.0))


def plane_wave_irs(array, directions, gains=None):
    """Capsule impulse responses for far-field arrivals with unit amplitude at the array centre."""
    if isinstance(directions, Direction):
        directions = [directions]
    gains = np.ones(len(directions)) if gains is None else np.asarray(gains, dtype=float)
    paths = []
    for d, g in zip(directions, gains):
        pos = BIG_ROOM.array_pos + FAR * unit_vector(d)
        paths.append(ImagePath(pos, 1, float(g) * FAR, FAR / BIG_ROOM.sound_speed))
    return array_impulse_responses(paths, BIG_ROOM, array)


def plane_wave(array, direction, signal):
    """Array recording of ``signal`` arriving as a plane wave; the bulk delay is removed."""
    irs = plane_wave_irs(array, direction)
    shift = FAR_SAMPLES - 64
    irs = irs[:, shift:]
    return sps.oaconvolve(np.asarray(signal)[None, :], irs, axes=1)[:, 64 : 64 + len(signal)]


def uncorrelated_plane_waves(array, directions, signals):
    """Sum of plane waves, each carrying its own signal."""
    return sum(plane_wave(array, d, s) for d, s in zip(directions, signals))


def interpolated_peak(h, centre, half_width, up=32):
    """Location (fractional samples) of the largest |h| within ``centre +- half_width`` after band-limited upsampling."""
    lo = max(int(np.floor(centre - half_width)) - 16, 0)
    hi = min(int(np.ceil(centre + half_width)) + 17, h.size)
    seg = h[lo:hi]
    fine = sps.resample(seg, seg.size * up)
    t = lo + np.arange(fine.size) / up
    sel = np.abs(t - centre) <= half_width
    return float(t[sel][np.argmax(np.abs(fine[sel]))])


def matched_filter(recording, source, max_lag):
    """Cross-correlation of each channel with the known source, lags 0..max_lag, scaled to impulse-response units."""
    n = recording.shape[-1] + source.size
    nfft = 1 << int(np.ceil(np.log2(n)))
    cross = np.fft.irfft(np.fft.rfft(recording, nfft) * np.conj(np.fft.rfft(source, nfft)), nfft)
    return cross[..., : max_lag + 1] / float(source @ source)


def diffuse_field(array, n_directions, n_samples, seed=0):
    """Independent unit-variance white noise arriving from a near-uniform set of directions."""
    rng = np.random.default_rng(seed)
    az, el = fibonacci_directions(n_directions)
    out = np.zeros((array.n_capsules, n_samples))
    for a, e in zip(az, el):
        out += plane_wave(array, Direction(a, e), rng.standard_normal(n_samples))
    return out
