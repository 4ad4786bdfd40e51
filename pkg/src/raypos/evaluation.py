"""Monte-Carlo campaigns over UE positions and noise draws, and CDF summaries."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .aoa import (DEFAULT_PROBE_RAYS, BaseStation, CalibrationTable, derive_rng,
                  sample_measurement)
from .errors import EmptyResults, NoCellScored
from .estimator import ALGORITHMS, PositionEstimate, locate
from .geometry import Scene, load_scene
from .rays import CellGrid

RESULTS_HEADER = ["pos_index", "real_index", "algo", "true_x", "true_y",
                  "est_x", "est_y", "error_m", "coverage_failed"]
SUMMARY_HEADER = ["algo", "sigma_deg", "rays_per_bs", "q50", "q90", "q95",
                  "coverage_fail_rate", "n_trials"]
CDF_HEADER = ["algo", "error_m", "cdf"]
QUANTILES = (0.5, 0.9, 0.95)

# stream ids under derive_rng(seed, pos, real, bs, <id>)
_NOISE_STREAM = 0
_MC_STREAM = 1
# derive_rng(seed, _POSITION_KEY) drives UE placement
_POSITION_KEY = 0x7E5


@dataclass
class CampaignConfig:
    scene: Optional[str] = None
    base_stations: list = field(default_factory=list)
    cell_size: float = 0.10
    slab_z_center: float = 1.0
    slab_z_halfwidth: float = 0.25
    rays_per_bs: list = field(default_factory=lambda: [1700])
    max_bounces: int = 5
    sigmas_deg: list = field(default_factory=lambda: [0.5])
    n_positions: int = 50
    position_seed: Optional[int] = None
    ue_z: float = 1.0
    clearance: float = 0.20
    realizations: int = 20
    estimators: list = field(default_factory=lambda: ["mc", "benchmark"])
    seed: int = 0
    n_probe_rays: int = DEFAULT_PROBE_RAYS
    bin_width_deg: float = 1.0
    measurement_3d: bool = False
    elevation_range_deg: Optional[list] = None
    benchmark_cone_scale: float = 1.0
    error_from: str = "argmax"

    def validate(self) -> None:
        for name in ("n_positions", "realizations", "n_probe_rays"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_bounces < 0:
            raise ValueError("max_bounces must be >= 0")
        if not self.rays_per_bs or min(self.rays_per_bs) < 1:
            raise ValueError("rays_per_bs must hold counts >= 1")
        if not self.sigmas_deg or min(self.sigmas_deg) < 0:
            raise ValueError("sigmas_deg must hold values >= 0")
        if not self.estimators or any(a not in ALGORITHMS for a in self.estimators):
            raise ValueError(f"estimators must be drawn from {ALGORITHMS}")
        if self.error_from not in ("argmax", "mean"):
            raise ValueError("error_from must be 'argmax' or 'mean'")
        if self.cell_size <= 0 or self.bin_width_deg <= 0:
            raise ValueError("cell_size and bin_width_deg must be positive")
        if self.elevation_range_deg is not None:
            if len(self.elevation_range_deg) != 2:
                raise ValueError("elevation_range_deg must be [low, high]")
            lo, hi = self.elevation_range_deg
            if not -90.0 <= lo < hi <= 90.0:
                raise ValueError("elevation_range_deg must satisfy -90 <= low < high <= 90")
            if self.measurement_3d:
                raise ValueError("elevation_range_deg and measurement_3d are mutually exclusive")

    @property
    def elevation_range(self) -> Optional[tuple]:
        if self.elevation_range_deg is None:
            return None
        return tuple(math.radians(float(v)) for v in self.elevation_range_deg)

    def bs_list(self, sigma: float = 0.0) -> list:
        out = []
        for i, b in enumerate(self.base_stations):
            if isinstance(b, BaseStation):
                out.append(BaseStation(b.position, b.capture_radius, sigma, i))
            else:
                out.append(BaseStation(tuple(b["position"]), b.get("capture_radius", 0.15), sigma, i))
        return out


@dataclass(frozen=True)
class TrialResult:
    pos_index: int
    real_index: int
    algo: str
    sigma_deg: float
    rays_per_bs: int
    true_position: tuple
    estimate: Optional[PositionEstimate]
    error: float
    coverage_failed: bool
    n_bs_used: int = 0


@dataclass(frozen=True)
class CdfSummary:
    algo: str
    sigma_deg: float
    rays_per_bs: int
    errors: np.ndarray
    quantiles: dict
    coverage_fail_rate: float

    @property
    def n_trials(self) -> int:
        return len(self.errors)

    def q(self, level: float) -> float:
        return quantile(self.errors, level)

    def cdf(self) -> tuple:
        n = len(self.errors)
        return self.errors, np.arange(1, n + 1) / n


def quantile(errors, q: float) -> float:
    """Smallest error whose empirical CDF value (i/N) reaches ``q``."""
    e = np.sort(np.asarray(errors, float))
    n = len(e)
    if n == 0:
        raise EmptyResults("no errors to take a quantile of")
    i = max(1, math.ceil(round(q * n, 9)))
    return float(e[min(i, n) - 1])


def sample_positions(scene: Scene, n: int, rng: np.random.Generator, z: float = 1.0,
                     clearance: float = 0.20, reference=None, max_tries: int = 100000) -> np.ndarray:
    """Uniform UE positions at height ``z`` in free space.

    A candidate is kept when it is at least ``clearance`` from every triangle
    and lies in the same set of closed volumes as ``reference`` (a point known
    to be in free space, e.g. a BS), judged by crossing parity.
    """
    lo, hi = scene.bounds
    ref_parity = scene.crossings(reference) % 2 if reference is not None else 1 if len(scene) else 0
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"only placed {len(out)} of {n} positions after {max_tries} tries")
        x = rng.uniform(lo[0] + clearance, hi[0] - clearance)
        y = rng.uniform(lo[1] + clearance, hi[1] - clearance)
        p = np.array([x, y, z])
        if scene.clearance(p) < clearance:
            continue
        if scene.crossings(p) % 2 != ref_parity:
            continue
        out.append(p)
    return np.array(out).reshape(-1, 3)


def campaign_positions(config: CampaignConfig, scene: Scene, bs_list) -> np.ndarray:
    seed = config.seed if config.position_seed is None else config.position_seed
    ref = bs_list[0].position if bs_list else None
    return sample_positions(scene, config.n_positions, derive_rng(seed, _POSITION_KEY),
                            config.ue_z, config.clearance, ref)


def _run_position(task) -> list:
    """All realizations, sweep points and estimators for one UE position."""
    scene, config, grid, pos_index, position, true_aoa = task
    bs_all = config.bs_list()
    out = []
    for sigma_deg in config.sigmas_deg:
        sigma = math.radians(sigma_deg)
        bss = [b.with_sigma(sigma) for b in bs_all]
        for r in range(config.realizations):
            meas, used = [], []
            for b in bss:
                theta = true_aoa[b.index]
                if theta is None:
                    continue
                rng = derive_rng(config.seed, pos_index, r, b.index, _NOISE_STREAM)
                meas.append(sample_measurement(theta, b, rng, config.measurement_3d))
                used.append(b)
            for l in config.rays_per_bs:
                for algo in config.estimators:
                    rngs = [derive_rng(config.seed, pos_index, r, b.index, _MC_STREAM) for b in used]
                    est = None
                    try:
                        _, est = locate(scene, used, meas, grid, algo, l, rngs,
                                        config.max_bounces, config.measurement_3d,
                                        config.benchmark_cone_scale,
                                        elevation_range=config.elevation_range)
                    except NoCellScored:
                        pass
                    if est is None:
                        err, failed = grid.diagonal, True
                    else:
                        pt = est.argmax_point if config.error_from == "argmax" else est.mean_point
                        err, failed = float(np.hypot(*(pt - position[:2]))), False
                    out.append(TrialResult(pos_index, r, algo, float(sigma_deg), int(l),
                                           tuple(float(c) for c in position), est, err,
                                           failed, len(used)))
    return out


def calibrate_campaign(config: CampaignConfig, scene: Scene, positions,
                       workers: int = 1) -> CalibrationTable:
    return CalibrationTable.build(scene, positions, config.bs_list(), config.n_probe_rays,
                                  math.radians(config.bin_width_deg), config.max_bounces,
                                  workers)


def run_campaign(config: CampaignConfig, scene: Optional[Scene] = None,
                 table: Optional[CalibrationTable] = None, workers: int = 1,
                 positions=None) -> list:
    """Run every (position, realization, sigma, l, estimator) trial.

    Results come back in canonical order (sigma, l, position, realization,
    estimator as configured) whatever the worker count. Missing calibration
    rows are computed on the fly when no table is supplied, otherwise they
    raise ``CalibrationMissing``.
    """
    config.validate()
    if scene is None:
        scene = load_scene(config.scene)
    bs_all = config.bs_list()
    grid = CellGrid.for_scene(scene, config.cell_size, config.slab_z_center,
                              config.slab_z_halfwidth)
    if positions is None:
        positions = campaign_positions(config, scene, bs_all)
    positions = np.asarray(positions, float).reshape(-1, 3)
    if table is None:
        table = calibrate_campaign(config, scene, positions, workers)
    tasks = []
    for i, p in enumerate(positions):
        aoa = {b.index: table.lookup(p, b.index) for b in bs_all}
        tasks.append((scene, config, grid, i, p, aoa))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_position, tasks))
    else:
        chunks = [_run_position(t) for t in tasks]
    results = [r for chunk in chunks for r in chunk]
    algo_rank = {a: i for i, a in enumerate(config.estimators)}
    sig_rank = {s: i for i, s in enumerate(config.sigmas_deg)}
    l_rank = {l: i for i, l in enumerate(config.rays_per_bs)}
    results.sort(key=lambda t: (sig_rank[t.sigma_deg], l_rank[t.rays_per_bs],
                                t.pos_index, t.real_index, algo_rank[t.algo]))
    return results


def summarize(results: Sequence[TrialResult]) -> dict:
    """CDF summary per (algo, sigma_deg, rays_per_bs), in first-seen order."""
    if not results:
        raise EmptyResults("no trial results to summarize")
    groups: dict = defaultdict(list)
    for r in results:
        groups[(r.algo, r.sigma_deg, r.rays_per_bs)].append(r)
    out = {}
    for key, rs in groups.items():
        errs = np.sort(np.array([r.error for r in rs], float))
        fail = sum(r.coverage_failed for r in rs) / len(rs)
        out[key] = CdfSummary(key[0], key[1], key[2], errs,
                              {q: quantile(errs, q) for q in QUANTILES}, fail)
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def sweep_tag(sigma_deg: float, l: int) -> str:
    return f"s{sigma_deg:g}_l{l}"


def write_results(results: Sequence[TrialResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in results:
            if r.estimate is None:
                ex = ey = float("nan")
            else:
                ex, ey = r.estimate.argmax_point
            w.writerow([r.pos_index, r.real_index, r.algo, _fmt(r.true_position[0]),
                        _fmt(r.true_position[1]), _fmt(ex), _fmt(ey), _fmt(r.error),
                        int(r.coverage_failed)])


def read_results(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary(summaries: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summaries.values():
            w.writerow([s.algo, f"{s.sigma_deg:g}", s.rays_per_bs,
                        *(_fmt(s.quantiles[q]) for q in QUANTILES),
                        _fmt(s.coverage_fail_rate), s.n_trials])


def write_cdf(summaries: Sequence[CdfSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDF_HEADER)
        for s in summaries:
            errs, cdf = s.cdf()
            for e, c in zip(errs, cdf):
                w.writerow([s.algo, _fmt(e), _fmt(c)])


def write_campaign(results: Sequence[TrialResult], out_dir) -> dict:
    """Results, CDF and summary CSVs, one results/CDF pair per sweep point."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_point: dict = defaultdict(list)
    for r in results:
        by_point[(r.sigma_deg, r.rays_per_bs)].append(r)
    summaries = summarize(results)
    for (sigma, l), rs in by_point.items():
        tag = sweep_tag(sigma, l)
        write_results(rs, out / f"results_{tag}.csv")
        write_cdf([s for k, s in summaries.items() if k[1:] == (sigma, l)], out / f"cdf_{tag}.csv")
    write_summary(summaries, out / "summary.csv")
    return summaries
