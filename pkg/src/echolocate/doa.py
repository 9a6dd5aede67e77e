"""EB-domain MVDR spatial spectra with frequency smoothing, and peak picking."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .encode import HoaFrames, sh_matrix, sh_orders
from .geometry import Direction, unit_vectors

DEFAULT_BAND = (500.0, 4000.0)


@dataclass
class EbCovariance:
    matrix: np.ndarray
    band: tuple
    n_frames: int
    n_bins: int
    order_weights: np.ndarray | None = None


def order_weights(eq_response) -> np.ndarray:
    """Per-order steering weights that best fit the equalised response across the band.

    ``eq_response`` is (bins, orders). The dominant eigenvector of the mean outer
    product is the best single real weighting of the band-averaged covariance,
    scaled so order 0 has weight 1.
    """
    e = np.asarray(eq_response, dtype=float)
    v = np.linalg.eigh(e.T @ e / e.shape[0])[1][:, -1]
    return v / v[0]


def covariance(hoa: HoaFrames, band=DEFAULT_BAND, frame_mask=None) -> EbCovariance:
    """Average ``B B^H`` over the selected STFT frames and in-band bins.

    ``frame_mask`` selects STFT frames (bool, length = number of frames); by
    default every frame belonging to a complete analysis frame is used.
    """
    if frame_mask is None:
        frame_mask = hoa.block_index >= 0
    frame_mask = np.asarray(frame_mask, dtype=bool)
    bins = hoa.band_mask(band)
    if not frame_mask.any() or not bins.any():
        raise ValueError("empty frame/bin selection for covariance")
    b = hoa.coeffs[frame_mask][:, bins].reshape(-1, hoa.coeffs.shape[-1])
    r = b.T @ b.conj() / b.shape[0]
    r = 0.5 * (r + r.conj().T)
    weights = order_weights(hoa.eq_response[bins])
    return EbCovariance(r, tuple(band), int(frame_mask.sum()), int(bins.sum()), weights)


@dataclass(frozen=True)
class DirectionGrid:
    """Equiangular grid; the +-90 degree rows collapse to single pole nodes."""

    step: float = 3.0

    @property
    def n_az(self) -> int:
        return int(round(360.0 / self.step))

    @property
    def elevations(self) -> np.ndarray:
        n = int(round(180.0 / self.step))
        return -90.0 + self.step * np.arange(n + 1)

    def nodes(self):
        return _grid_nodes(self.step)

    def neighbors(self):
        return _grid_neighbors(self.step)


@lru_cache(maxsize=4)
def _grid_nodes(step):
    g = DirectionGrid(step)
    els = g.elevations
    az = step * np.arange(g.n_az)
    azs, elsv = [0.0], [-90.0]
    for el in els[1:-1]:
        azs.extend(az)
        elsv.extend([el] * az.size)
    azs.append(0.0)
    elsv.append(90.0)
    return np.array(azs), np.array(elsv)


@lru_cache(maxsize=4)
def _grid_neighbors(step):
    g = DirectionGrid(step)
    n_az = g.n_az
    n_rows = g.elevations.size - 2  # non-pole rows
    south, north = 0, 1 + n_rows * n_az

    def node(row, i):
        if row < 0:
            return south
        if row >= n_rows:
            return north
        return 1 + row * n_az + (i % n_az)

    nbrs = [[node(0, i) for i in range(n_az)]]
    for row in range(n_rows):
        for i in range(n_az):
            s = set()
            for dr in (-1, 0, 1):
                for di in (-1, 0, 1):
                    if dr == 0 and di == 0:
                        continue
                    s.add(node(row + dr, i + di))
            nbrs.append(sorted(s))
    nbrs.append([node(n_rows - 1, i) for i in range(n_az)])
    return tuple(tuple(n) for n in nbrs)


@dataclass
class SpatialSpectrum:
    azimuth: np.ndarray
    elevation: np.ndarray
    power: np.ndarray
    grid: DirectionGrid = field(default_factory=DirectionGrid)

    @property
    def power_db(self) -> np.ndarray:
        return 10 * np.log10(self.power / self.power.max())

    def argmax(self) -> Direction:
        i = int(np.argmax(self.power))
        return Direction(self.azimuth[i], self.elevation[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["azimuth", "elevation", "power_db"])
            for az, el, p in zip(self.azimuth, self.elevation, self.power_db):
                w.writerow([f"{az:.1f}", f"{el:.1f}", f"{p:.6f}"])


def sps_mvdr(r, grid: DirectionGrid = DirectionGrid(), loading: float = 1e-3) -> SpatialSpectrum:
    """MVDR pseudo-spectrum ``1 / (a^H (R + eps I)^-1 a)`` over the grid.

    The steering vector ``a`` is the real SH vector ``y`` scaled per order by the
    covariance's ``order_weights``, so it matches the residual rolloff left by
    the regularised equaliser. A bare matrix is steered with ``y``.
    """
    weights = r.order_weights if isinstance(r, EbCovariance) else None
    mat = r.matrix if isinstance(r, EbCovariance) else np.asarray(r)
    dim = mat.shape[0]
    order = int(round(np.sqrt(dim))) - 1
    eps = loading * np.real(np.trace(mat)) / dim
    loaded = mat + eps * np.eye(dim)
    if not np.all(np.isfinite(loaded)) or np.linalg.cond(loaded) > 1e12:
        raise np.linalg.LinAlgError("covariance is singular even after diagonal loading")
    inv = np.linalg.inv(loaded)
    az, el = grid.nodes()
    y = sh_matrix(order, az, el)
    if weights is not None:
        y = y * np.asarray(weights)[sh_orders(order)]
    denom = np.real(np.einsum("gi,ij,gj->g", y, inv, y))
    return SpatialSpectrum(az, el, 1.0 / denom, grid)


@dataclass
class DoaSet:
    direct: Direction
    reflections: list
    levels_db: list  # direct first

    def all_directions(self) -> list:
        return [self.direct] + list(self.reflections)

    def to_dict(self) -> dict:
        return {
            "direct": self.direct.to_dict(),
            "reflections": [d.to_dict() for d in self.reflections],
            "levels_db": list(self.levels_db),
        }

    @classmethod
    def from_dict(cls, d) -> "DoaSet":
        return cls(
            Direction(**d["direct"]),
            [Direction(**r) for r in d["reflections"]],
            list(d["levels_db"]),
        )


def local_maxima(sps: SpatialSpectrum) -> np.ndarray:
    """Indices of nodes not exceeded by any 8-neighbour (ties go to the lower index)."""
    p = sps.power
    out = []
    for i, nb in enumerate(sps.grid.neighbors()):
        nb = np.asarray(nb)
        if np.all(p[i] > p[nb[nb < i]]) and np.all(p[i] >= p[nb[nb > i]]):
            out.append(i)
    return np.array(out, dtype=int)


def pick_peaks(sps: SpatialSpectrum, beta_db: float = -3.0, min_separation: float = 6.0) -> DoaSet:
    """Thresholded local maxima; the global maximum is taken as the direct path."""
    if sps.power.size == 0:
        raise ValueError("empty spectrum")
    db = sps.power_db
    cand = local_maxima(sps)
    cand = cand[db[cand] >= beta_db]
    cand = cand[np.argsort(-db[cand], kind="stable")]
    vecs = unit_vectors(sps.azimuth, sps.elevation)
    cos_sep = np.cos(np.radians(min_separation))
    kept = []
    for i in cand:
        if all(np.dot(vecs[i], vecs[j]) <= cos_sep + 1e-12 for j in kept):
            kept.append(i)
    dirs = [Direction(sps.azimuth[i], sps.elevation[i]) for i in kept]
    return DoaSet(dirs[0], dirs[1:], [float(db[i]) for i in kept])
