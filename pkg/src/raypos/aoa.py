"""Ground-truth AoA by launch-and-bin, the Gaussian error channel, and the
angle posterior used to weight or sample reverse rays."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import CalibrationMissing
from .geometry import Scene
from .rays import (DEFAULT_MAX_BOUNCES, TWO_PI, LaunchAngle, _check_origin,
                   fibonacci_sphere, wrap_angle, wrap_to_pi)

TRUNCATION = 4.0
DEFAULT_PROBE_RAYS = 1 << 20
DEFAULT_BIN_WIDTH = math.radians(1.0)
CALIBRATION_HEADER = ["pos_x", "pos_y", "pos_z", "bs_index", "azimuth_rad", "elevation_rad", "found"]
_PROBE_CHUNK = 1 << 16


@dataclass(frozen=True)
class BaseStation:
    position: tuple
    capture_radius: float = 0.15
    sigma: float = 0.0
    index: int = 0

    def __post_init__(self):
        if self.capture_radius <= 0:
            raise ValueError("capture_radius must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))

    def with_sigma(self, sigma: float) -> "BaseStation":
        return BaseStation(self.position, self.capture_radius, sigma, self.index)


@dataclass(frozen=True)
class Measurement:
    bs_index: int
    y: LaunchAngle


def _trunc_norm(sigma: float) -> tuple:
    """Half-width of the support window and the mass it keeps."""
    window = min(TRUNCATION * sigma, math.pi)
    return window, math.erf(window / (sigma * math.sqrt(2.0)))


@dataclass(frozen=True)
class AngleDistribution:
    """Gaussian posterior over launch angles, centred on the measurement.

    Azimuth differences are wrapped to [-pi, pi) and the density is cut at
    +/- 4 sigma then renormalised, so it integrates to one over the circle.
    Elevation is Gaussian when ``sigma_el`` is positive (3D measurements),
    fixed at the mean when it is zero, or, when ``elevation_range`` is given
    (elevation not measured), equiprobable over the directions in that band:
    uniform in solid angle, so sin(elevation) is uniform.
    A zero sigma is a point mass: pdf 1 at the mean, 0 elsewhere.
    """

    mean: LaunchAngle
    sigma_az: float
    sigma_el: float = 0.0
    elevation_range: Optional[tuple] = None

    def __post_init__(self):
        if self.sigma_az < 0 or self.sigma_el < 0:
            raise ValueError("sigmas must be non-negative")
        if self.elevation_range is not None:
            lo, hi = (float(v) for v in self.elevation_range)
            if not -math.pi / 2 <= lo < hi <= math.pi / 2:
                raise ValueError("elevation_range must satisfy -pi/2 <= lo < hi <= pi/2")
            if self.sigma_el > 0:
                raise ValueError("elevation is either measured (sigma_el) or ranged, not both")
            object.__setattr__(self, "elevation_range", (lo, hi))

    @property
    def three_d(self) -> bool:
        return self.sigma_el > 0 or self.elevation_range is not None

    def pdf_azimuth(self, azimuth):
        d = wrap_to_pi(np.asarray(azimuth, float) - self.mean.azimuth)
        return _gauss_pdf(d, self.sigma_az)

    def pdf_elevation(self, elevation):
        e = np.asarray(elevation, float)
        if self.elevation_range is not None:
            lo, hi = self.elevation_range
            dens = np.cos(e) / (math.sin(hi) - math.sin(lo))
            return np.where((e >= lo) & (e <= hi), dens, 0.0)
        return _gauss_pdf(e - self.mean.elevation, self.sigma_el)

    def pdf(self, azimuth, elevation=None):
        """Density at the given angles (radians). Elevation only enters in 3D."""
        p = self.pdf_azimuth(azimuth)
        if self.three_d:
            if elevation is None:
                raise ValueError("3D posterior needs an elevation")
            p = p * self.pdf_elevation(elevation)
        return p

    def sample(self, rng: np.random.Generator, n: int) -> tuple:
        """Draw ``n`` (azimuth, elevation) pairs from the truncated density."""
        az = wrap_angle(self.mean.azimuth + _trunc_draws(rng, n, self.sigma_az))
        if self.elevation_range is not None:
            lo, hi = self.elevation_range
            el = np.arcsin(rng.uniform(math.sin(lo), math.sin(hi), size=n))
        elif self.sigma_el > 0:
            el = self.mean.elevation + _trunc_draws(rng, n, self.sigma_el)
            el = np.clip(el, -math.pi / 2, math.pi / 2)
        else:
            el = np.full(n, self.mean.elevation)
        return np.asarray(az, float), el


def _gauss_pdf(d, sigma: float):
    d = np.asarray(d, float)
    if sigma == 0:
        return np.where(d == 0.0, 1.0, 0.0)
    window, mass = _trunc_norm(sigma)
    dens = np.exp(-0.5 * (d / sigma) ** 2) / (sigma * math.sqrt(TWO_PI) * mass)
    return np.where(np.abs(d) <= window, dens, 0.0)


def _trunc_draws(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    if sigma == 0:
        return np.zeros(n)
    z = rng.standard_normal(n)
    bad = np.abs(z) > TRUNCATION
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > TRUNCATION
    return sigma * z


def posterior(measurement: Measurement, bs: BaseStation, three_d: bool = False,
              elevation_range: Optional[tuple] = None) -> AngleDistribution:
    """With an equiprobable prior the posterior is N(y, sigma^2) around the reading.

    ``three_d`` treats the measured elevation as noisy too; ``elevation_range``
    instead ignores it and spreads launches uniformly over that interval.
    """
    if three_d and elevation_range is not None:
        raise ValueError("three_d and elevation_range are mutually exclusive")
    return AngleDistribution(measurement.y, bs.sigma, bs.sigma if three_d else 0.0,
                             elevation_range)


def sample_measurement(theta_true: LaunchAngle, bs: BaseStation, rng: np.random.Generator,
                       perturb_elevation: bool = False) -> Measurement:
    """y = theta + w, w ~ N(0, sigma^2); azimuth wrapped into [0, 2pi)."""
    w = rng.standard_normal(2) * bs.sigma
    el = theta_true.elevation + (w[1] if perturb_elevation else 0.0)
    return Measurement(bs.index, LaunchAngle(theta_true.azimuth + w[0], el))


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for ``key`` under ``master_seed``.

    The stream is ``PCG64(SeedSequence(master_seed, spawn_key=key))``, so it
    depends only on the key and never on scheduling order.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def probe_arrivals(scene: Scene, ue_position, bs_list: Sequence[BaseStation],
                   n_probe_rays: int = DEFAULT_PROBE_RAYS,
                   max_bounces: int = DEFAULT_MAX_BOUNCES) -> list:
    """Launch a Fibonacci-sphere fan from the UE and collect, for every BS,
    the arrival directions and path lengths of rays passing within its
    capture radius. Returns one ``(directions (k, 3), lengths (k,))`` per BS."""
    if n_probe_rays < 1:
        raise ValueError("n_probe_rays must be >= 1")
    o = _check_origin(scene, ue_position)
    dirs = fibonacci_sphere(n_probe_rays)
    bs_pos = np.array([b.position for b in bs_list], float).reshape(-1, 3)
    radius = np.array([b.capture_radius for b in bs_list], float)
    lo, hi = scene.bounds
    packed = scene.packed()
    nbs = len(bs_list)
    found_dirs: list = [[] for _ in range(nbs)]
    found_len: list = [[] for _ in range(nbs)]
    for s in range(0, n_probe_rays, _PROBE_CHUNK):
        chunk = np.ascontiguousarray(dirs[s:s + _PROBE_CHUNK])
        n = chunk.shape[0]
        hit = np.zeros((n, nbs), np.bool_)
        arrival = np.zeros((n, nbs, 3))
        plen = np.zeros((n, nbs))
        _kernels.probe_capture(o, chunk, int(max_bounces), *packed, lo, hi,
                               bs_pos, radius, hit, arrival, plen)
        for m in range(nbs):
            sel = hit[:, m]
            found_dirs[m].append(arrival[sel, m])
            found_len[m].append(plen[sel, m])
    return [(np.concatenate(found_dirs[m]).reshape(-1, 3), np.concatenate(found_len[m]))
            for m in range(nbs)]


def _best_bin(values: np.ndarray, lengths: np.ndarray, lo: float, hi: float,
              bin_width: float) -> tuple:
    """Most populated bin of ``values``; ties go to the bin whose members have
    the smallest total path length, then to the lowest bin. Returns
    (bin index, member mask, bin center)."""
    nbins = max(1, math.ceil((hi - lo) / bin_width - 1e-9))
    idx = np.clip(np.floor((values - lo) / bin_width).astype(np.int64), 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    total = np.bincount(idx, weights=lengths, minlength=nbins)
    top = np.flatnonzero(counts == counts.max())
    k = int(top[np.argmin(total[top])])
    b0 = lo + k * bin_width
    b1 = min(b0 + bin_width, hi)
    return k, idx == k, 0.5 * (b0 + b1)


def dominant_arrival(directions: np.ndarray, lengths: np.ndarray,
                     bin_width: float = DEFAULT_BIN_WIDTH,
                     capture_radius: float = 0.15) -> Optional[LaunchAngle]:
    """Reduce captured arrival directions to one AoA.

    Azimuths are histogrammed over [0, 2pi) and the center of the most
    populated bin is returned. Elevation is resolved inside that bin: its
    members are histogrammed by elevation and the winning sub-bin is refined
    to its cluster mean, which separates direct and floor/ceiling paths that
    share an azimuth.
    """
    if len(directions) == 0:
        return None
    az = wrap_angle(np.arctan2(directions[:, 1], directions[:, 0]))
    el = np.arcsin(np.clip(directions[:, 2], -1.0, 1.0))
    _, members, az_center = _best_bin(az, lengths, 0.0, TWO_PI, bin_width)
    el_m, len_m = el[members], lengths[members]
    _, sub, _ = _best_bin(el_m, len_m, -math.pi / 2, math.pi / 2, bin_width)
    # mean-shift over a window wide enough to hold one path's capture disc,
    # so fixed bin edges do not bias the estimate
    spread = math.asin(min(1.0, capture_radius / max(float(np.min(len_m[sub])), 1e-9)))
    window = max(bin_width, 2.2 * spread)
    el_hat = float(np.mean(el_m[sub]))
    for _ in range(20):
        nxt = float(np.mean(el_m[np.abs(el_m - el_hat) <= window]))
        if nxt == el_hat:
            break
        el_hat = nxt
    return LaunchAngle(az_center, el_hat)


def calibrate_position(scene: Scene, ue_position, bs_list: Sequence[BaseStation],
                       n_probe_rays: int = DEFAULT_PROBE_RAYS,
                       bin_width: float = DEFAULT_BIN_WIDTH,
                       max_bounces: int = DEFAULT_MAX_BOUNCES) -> list:
    """Noiseless AoA at every BS for one UE position (None where no ray arrives)."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    arrivals = probe_arrivals(scene, ue_position, bs_list, n_probe_rays, max_bounces)
    return [dominant_arrival(d, l, bin_width, bs.capture_radius)
            for (d, l), bs in zip(arrivals, bs_list)]


def establish_true_aoa(scene: Scene, ue_position, bs: BaseStation,
                       n_probe_rays: int = DEFAULT_PROBE_RAYS,
                       bin_width: float = DEFAULT_BIN_WIDTH,
                       max_bounces: int = DEFAULT_MAX_BOUNCES) -> Optional[LaunchAngle]:
    return calibrate_position(scene, ue_position, [bs], n_probe_rays, bin_width, max_bounces)[0]


def geometric_aoa(bs_position, target) -> LaunchAngle:
    """Exact line-of-sight bearing from a BS toward ``target``."""
    return LaunchAngle.from_vector(np.asarray(target, float) - np.asarray(bs_position, float))


class CalibrationTable:
    """Ground-truth AoA keyed by (UE position, BS index)."""

    def __init__(self):
        self._rows: dict = {}

    @staticmethod
    def _key(position) -> tuple:
        return tuple(round(float(c), 9) for c in position)

    def __len__(self) -> int:
        return len(self._rows)

    def add(self, position, bs_index: int, angle: Optional[LaunchAngle]) -> None:
        self._rows[(self._key(position), int(bs_index))] = (tuple(float(c) for c in position), angle)

    def has(self, position, bs_index: int) -> bool:
        return (self._key(position), int(bs_index)) in self._rows

    def lookup(self, position, bs_index: int) -> Optional[LaunchAngle]:
        try:
            return self._rows[(self._key(position), int(bs_index))][1]
        except KeyError:
            raise CalibrationMissing(
                f"no calibration for position {list(position)} at BS {bs_index}") from None

    def rows(self) -> list:
        return [(pos, k[1], ang) for k, (pos, ang) in self._rows.items()]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CALIBRATION_HEADER)
            for pos, b, ang in self.rows():
                if ang is None:
                    w.writerow([*map(repr, pos), b, "nan", "nan", 0])
                else:
                    w.writerow([*map(repr, pos), b, repr(ang.azimuth), repr(ang.elevation), 1])

    @classmethod
    def read_csv(cls, path) -> "CalibrationTable":
        table = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != CALIBRATION_HEADER:
                raise ValueError(f"{path}: unexpected calibration header {reader.fieldnames}")
            for row in reader:
                pos = (float(row["pos_x"]), float(row["pos_y"]), float(row["pos_z"]))
                ang = None
                if int(row["found"]):
                    ang = LaunchAngle(float(row["azimuth_rad"]), float(row["elevation_rad"]))
                table.add(pos, int(row["bs_index"]), ang)
        return table

    @classmethod
    def build(cls, scene: Scene, positions, bs_list: Sequence[BaseStation],
              n_probe_rays: int = DEFAULT_PROBE_RAYS, bin_width: float = DEFAULT_BIN_WIDTH,
              max_bounces: int = DEFAULT_MAX_BOUNCES, workers: int = 1) -> "CalibrationTable":
        positions = [tuple(float(c) for c in p) for p in positions]
        args = [(scene, p, list(bs_list), n_probe_rays, bin_width, max_bounces) for p in positions]
        if workers > 1 and len(positions) > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=workers) as pool:
                angles = list(pool.map(_calibrate_star, args))
        else:
            angles = [_calibrate_star(a) for a in args]
        table = cls()
        for p, per_bs in zip(positions, angles):
            for bs, ang in zip(bs_list, per_bs):
                table.add(p, bs.index, ang)
        return table


def _calibrate_star(args):
    return calibrate_position(*args)


def load_calibration(path) -> CalibrationTable:
    return CalibrationTable.read_csv(Path(path))
