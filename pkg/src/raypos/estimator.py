"""Reverse ray-tracing position estimators.

Three ways of choosing launch angles per BS share one scoring routine:

* ``mc``: draw angles from the measurement posterior, count rays.
* ``uniform``: evenly spaced angles over the whole domain, each ray weighted
  by the posterior density.
* ``benchmark``: evenly spaced angles in ``[y - sigma, y + sigma]``, unweighted.

A cell's score is the (weighted) number of ways to pick one ray per BS such
that every picked ray crosses the cell. Because the crossing indicator splits
per BS, that sum over combinations equals the product over BS of each BS's
per-cell weight sum, which is what ``score_grid`` computes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .aoa import AngleDistribution, BaseStation, Measurement, posterior
from .errors import EmptyScore, NoCellScored
from .geometry import Scene
from .rays import (DEFAULT_MAX_BOUNCES, TWO_PI, CellGrid, LaunchAngle,
                   accumulate, directions, fibonacci_sphere, wrap_angle)

ALGORITHMS = ("mc", "uniform", "benchmark")


@dataclass
class AngleSampleSet:
    """Launch angles (radians) and per-angle weights, one entry per BS."""

    azimuths: list
    elevations: list
    weights: list
    weighted: bool = False

    def __len__(self) -> int:
        return len(self.azimuths)

    def launch_angles(self, i: int) -> list:
        return [LaunchAngle(a, e) for a, e in zip(self.azimuths[i], self.elevations[i])]

    def directions(self, i: int) -> np.ndarray:
        return directions(self.azimuths[i], self.elevations[i])

    def scaled(self, i: int, factor: float) -> "AngleSampleSet":
        w = [np.array(x, float) for x in self.weights]
        w[i] = w[i] * factor
        return AngleSampleSet(self.azimuths, self.elevations, w, self.weighted)


def _as_rngs(rng, n: int) -> list:
    if isinstance(rng, np.random.Generator):
        return [rng] * n
    rngs = list(rng)
    if len(rngs) != n:
        raise ValueError("need one random stream per posterior")
    return rngs


def sample_angles_mc(posteriors: Sequence[AngleDistribution], l: int, rng) -> AngleSampleSet:
    """``l`` independent draws per BS from its posterior, all with weight 1.

    ``rng`` is one generator shared in order, or one generator per posterior.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    az, el, w = [], [], []
    for post, g in zip(posteriors, _as_rngs(rng, len(posteriors))):
        a, e = post.sample(g, l)
        az.append(a)
        el.append(e)
        w.append(np.ones(l))
    return AngleSampleSet(az, el, w, weighted=False)


def uniform_azimuths(l: int) -> np.ndarray:
    """``l`` evenly spaced azimuths 2*pi*k/l over [0, 2pi)."""
    if l < 1:
        raise ValueError("l must be >= 1")
    return TWO_PI * np.arange(l) / l


def sample_angles_uniform(posteriors: Sequence[AngleDistribution], l: int) -> AngleSampleSet:
    """Evenly discretised angle domain, weighted by each BS's posterior.

    Planar posteriors keep the measured elevation and sweep azimuth over
    [0, 2pi); 3D posteriors use ``l`` Fibonacci-sphere directions.
    """
    az, el, w = [], [], []
    for post in posteriors:
        if post.three_d:
            v = fibonacci_sphere(l)
            a = wrap_angle(np.arctan2(v[:, 1], v[:, 0]))
            e = np.arcsin(np.clip(v[:, 2], -1, 1))
        else:
            a = uniform_azimuths(l)
            e = np.full(l, post.mean.elevation)
        p = np.asarray(post.pdf(a, e), float)
        if post.three_d:
            # equal-area points: convert density per radian^2 to per steradian
            p = p / np.maximum(np.cos(e), 1e-12)
        az.append(np.asarray(a, float))
        el.append(e)
        w.append(p)
    return AngleSampleSet(az, el, w, weighted=True)


def _r2_sequence(n: int) -> np.ndarray:
    # additive recurrence on the plastic number; low-discrepancy in [0,1)^2
    g = 1.32471795724474602596
    a = np.array([1.0 / g, 1.0 / (g * g)])
    return np.mod(0.5 + np.outer(np.arange(1, n + 1), a), 1.0)


def sample_angles_benchmark(measurements: Sequence[Measurement], sigmas: Sequence[float],
                            l: int, cone_scale: float = 1.0, three_d: bool = False,
                            elevation_range: Optional[tuple] = None) -> AngleSampleSet:
    """``l`` evenly spaced unweighted angles in ``y +/- cone_scale * sigma``.

    In 3D mode the elevation is spread too, using ``l`` low-discrepancy points
    over the square cone. With ``elevation_range`` the same points cover the
    azimuth cone times that elevation band, spaced evenly in sin(elevation).
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    az, el, w = [], [], []
    for m, sigma in zip(measurements, sigmas):
        half = cone_scale * sigma
        offsets = np.linspace(-half, half, l) if l > 1 else np.zeros(1)
        if elevation_range is not None:
            u = _r2_sequence(l)
            a = m.y.azimuth + half * (2.0 * u[:, 0] - 1.0)
            s0, s1 = math.sin(elevation_range[0]), math.sin(elevation_range[1])
            e = np.arcsin(s0 + (s1 - s0) * u[:, 1])
        elif three_d:
            u = _r2_sequence(l) * 2.0 - 1.0
            a = m.y.azimuth + half * u[:, 0]
            e = np.clip(m.y.elevation + half * u[:, 1], -math.pi / 2, math.pi / 2)
        else:
            a = m.y.azimuth + offsets
            e = np.full(l, m.y.elevation)
        az.append(np.asarray(wrap_angle(a), float))
        el.append(e)
        w.append(np.ones(l))
    return AngleSampleSet(az, el, w, weighted=False)


@dataclass
class CellScore:
    """Per-BS, per-cell tallies and the combined score.

    ``counts[i, k]`` is the number of BS ``i`` rays crossing cell ``k`` and
    ``weight_sums[i, k]`` the sum of their weights. Tallies from disjoint ray
    batches merge by addition; ``beta`` is derived afterwards.
    """

    counts: np.ndarray
    weight_sums: np.ndarray
    weighted: bool = False

    @classmethod
    def empty(cls, n_bs: int, n_cells: int, weighted: bool = False) -> "CellScore":
        return cls(np.zeros((n_bs, n_cells), np.int64), np.zeros((n_bs, n_cells)), weighted)

    @classmethod
    def from_ray_cells(cls, ray_cells: Sequence[Sequence[Iterable[int]]], n_cells: int,
                       weights: Optional[Sequence[Sequence[float]]] = None) -> "CellScore":
        """Build tallies from explicit per-ray cell sets (``ray_cells[i][j]`` is
        the set of cells crossed by ray ``j`` of BS ``i``)."""
        score = cls.empty(len(ray_cells), n_cells, weighted=weights is not None)
        for i, rays in enumerate(ray_cells):
            for j, cells in enumerate(rays):
                w = 1.0 if weights is None else float(weights[i][j])
                for k in set(cells):
                    score.counts[i, k] += 1
                    score.weight_sums[i, k] += w
        return score

    def merge(self, other: "CellScore") -> "CellScore":
        if self.counts.shape != other.counts.shape or self.weighted != other.weighted:
            raise ValueError("cannot merge scores of different shape or mode")
        return CellScore(self.counts + other.counts, self.weight_sums + other.weight_sums,
                         self.weighted)

    @property
    def n_bs(self) -> int:
        return self.counts.shape[0]

    @property
    def beta(self) -> np.ndarray:
        if self.n_bs == 0:
            return np.zeros(self.counts.shape[1])
        if self.weighted:
            return np.prod(self.weight_sums, axis=0)
        return np.prod(self.counts, axis=0).astype(float)


@dataclass(frozen=True)
class PositionEstimate:
    argmax_cell: int
    argmax_point: np.ndarray
    mean_point: np.ndarray
    score_map: Optional[np.ndarray] = None


def score_grid(scene: Scene, bs_list: Sequence[BaseStation], angle_sets: AngleSampleSet,
               grid: CellGrid, max_bounces: int = DEFAULT_MAX_BOUNCES,
               allow_empty: bool = False) -> CellScore:
    """Trace every (BS, angle) ray and combine the per-BS tallies.

    Raises ``NoCellScored`` when no cell is crossed by rays from every BS,
    unless ``allow_empty``. In weighted mode, zero-weight rays are skipped since
    they cannot change any score; their crossings are then absent from
    ``counts``.
    """
    if len(angle_sets) != len(bs_list):
        raise ValueError("need exactly one angle set per BS")
    score = CellScore.empty(len(bs_list), grid.n_cells, angle_sets.weighted)
    for i, bs in enumerate(bs_list):
        accumulate(scene, bs.position, angle_sets.directions(i), angle_sets.weights[i],
                   grid, max_bounces, skip_zero=angle_sets.weighted,
                   counts=score.counts[i], wsum=score.weight_sums[i])
    if not allow_empty and not np.any(score.beta > 0):
        raise NoCellScored("no grid cell is crossed by rays from every base station", score)
    return score


def estimate(score, grid: CellGrid, keep_map: bool = False) -> PositionEstimate:
    """Argmax cell (ties to the lowest linear index) and score-weighted mean."""
    beta = score.beta if isinstance(score, CellScore) else np.asarray(score, float)
    total = beta.sum()
    if not np.any(beta > 0):
        raise EmptyScore("every cell score is zero")
    k = int(np.argmax(beta))
    centers = grid.centers()
    mean = (centers * beta[:, None]).sum(axis=0) / total
    return PositionEstimate(k, centers[k], mean, beta / total if keep_map else None)


def choose_angles(algo: str, measurements: Sequence[Measurement], bs_list: Sequence[BaseStation],
                  l: int, rngs=None, three_d: bool = False, cone_scale: float = 1.0,
                  elevation_range: Optional[tuple] = None) -> AngleSampleSet:
    """Launch angles for one of the three algorithms."""
    if algo in ("mc", "uniform"):
        posts = [posterior(m, b, three_d, elevation_range) for m, b in zip(measurements, bs_list)]
        if algo == "mc":
            return sample_angles_mc(posts, l, rngs)
        return sample_angles_uniform(posts, l)
    if algo == "benchmark":
        return sample_angles_benchmark(measurements, [b.sigma for b in bs_list], l,
                                       cone_scale, three_d, elevation_range)
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")


def locate(scene: Scene, bs_list: Sequence[BaseStation], measurements: Sequence[Measurement],
           grid: CellGrid, algo: str = "mc", l: int = 1700, rngs=None,
           max_bounces: int = DEFAULT_MAX_BOUNCES, three_d: bool = False,
           cone_scale: float = 1.0, keep_map: bool = False,
           elevation_range: Optional[tuple] = None) -> tuple:
    """End-to-end estimate from one measurement per BS.

    Returns ``(score, estimate)``. Base stations are matched to measurements by
    index; base stations without a measurement do not take part.
    """
    by_index = {b.index: b for b in bs_list}
    used = [by_index[m.bs_index] for m in measurements]
    if rngs is None and algo == "mc":
        rngs = np.random.default_rng(0)
    angles = choose_angles(algo, measurements, used, l, rngs, three_d, cone_scale,
                           elevation_range)
    score = score_grid(scene, used, angles, grid, max_bounces)
    return score, estimate(score, grid, keep_map)
