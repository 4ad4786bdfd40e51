"""Ray launching, specular bounce paths, and grid-cell traversal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import _kernels
from .errors import OriginOutsideScene
from .geometry import Scene

TWO_PI = 2.0 * math.pi
DEFAULT_MAX_BOUNCES = 5


def wrap_angle(a):
    """Wrap radians into [0, 2pi)."""
    w = np.mod(a, TWO_PI)
    # np.mod can return exactly 2pi for tiny negative inputs
    return np.where(w >= TWO_PI, 0.0, w) if np.ndim(w) else (0.0 if w >= TWO_PI else float(w))


def wrap_to_pi(a):
    """Wrap radians into [-pi, pi)."""
    return np.mod(np.asarray(a) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class LaunchAngle:
    """Direction as azimuth (from +x, counter-clockwise) and elevation above
    the horizontal plane, both in radians."""

    azimuth: float
    elevation: float = 0.0

    def __post_init__(self):
        az, el = float(self.azimuth), float(self.elevation)
        if el > math.pi / 2 or el < -math.pi / 2:
            # going over a pole flips the azimuth
            el = math.asin(math.sin(el))
            if math.cos(float(self.elevation)) < 0:
                az += math.pi
        object.__setattr__(self, "azimuth", wrap_angle(az))
        object.__setattr__(self, "elevation", el)

    @classmethod
    def from_degrees(cls, azimuth_deg: float, elevation_deg: float = 0.0) -> "LaunchAngle":
        return cls(math.radians(azimuth_deg), math.radians(elevation_deg))

    @classmethod
    def from_vector(cls, v) -> "LaunchAngle":
        x, y, z = (float(c) for c in v)
        return cls(math.atan2(y, x), math.atan2(z, math.hypot(x, y)))

    @classmethod
    def from_polar(cls, azimuth: float, polar: float) -> "LaunchAngle":
        """Build from a polar angle measured from +z in [0, pi]."""
        return cls(azimuth, math.pi / 2 - polar)

    @property
    def polar(self) -> float:
        return math.pi / 2 - self.elevation

    def to_vector(self) -> np.ndarray:
        return np.array(directions(self.azimuth, self.elevation), float)

    def degrees(self) -> tuple:
        return math.degrees(self.azimuth), math.degrees(self.elevation)


def directions(azimuth, elevation):
    """Unit vectors for arrays of azimuth/elevation. Returns shape (..., 3)."""
    az = np.asarray(azimuth, float)
    el = np.asarray(elevation, float)
    ce = np.cos(el)
    return np.stack(np.broadcast_arrays(ce * np.cos(az), ce * np.sin(az), np.sin(el)), axis=-1)


@dataclass(frozen=True)
class RayPath:
    """Polyline of one traced ray.

    ``vertices`` holds the launch point, every bounce point and the final point
    (the last surface hit, or the exit point on the bounding box). ``normals``
    are the surface normals at the bounce vertices, facing the incoming ray.
    """

    vertices: np.ndarray
    bounce_count: int
    launch_angle: LaunchAngle
    source_bs: int = -1
    escaped: bool = False
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    triangles: tuple = ()

    @property
    def segments(self):
        v = self.vertices
        return list(zip(v[:-1], v[1:]))

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)))

    def final_direction(self) -> np.ndarray:
        d = self.vertices[-1] - self.vertices[-2]
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class CellGrid:
    """Square cells of side ``cell_size`` over the horizontal plane; each cell
    is a box spanning ``slab_z_center +/- slab_z_halfwidth`` vertically.

    Linear cell index is ``iy * nx + ix``.
    """

    origin: tuple
    cell_size: float
    nx: int
    ny: int
    slab_z_center: float = 1.0
    slab_z_halfwidth: float = 0.25

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per axis")
        if self.slab_z_halfwidth < 0:
            raise ValueError("slab half-width must be non-negative")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def for_scene(cls, scene: Scene, cell_size: float = 0.10,
                  slab_z_center: float = 1.0, slab_z_halfwidth: float = 0.25) -> "CellGrid":
        lo, hi = scene.bounds
        nx = max(1, math.ceil((hi[0] - lo[0]) / cell_size - 1e-9))
        ny = max(1, math.ceil((hi[1] - lo[1]) / cell_size - 1e-9))
        return cls((lo[0], lo[1]), cell_size, nx, ny, slab_z_center, slab_z_halfwidth)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def z_range(self) -> tuple:
        return (self.slab_z_center - self.slab_z_halfwidth,
                self.slab_z_center + self.slab_z_halfwidth)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.nx * self.cell_size, self.ny * self.cell_size)

    def index(self, ix: int, iy: int) -> int:
        return iy * self.nx + ix

    def unravel(self, k):
        return np.asarray(k) % self.nx, np.asarray(k) // self.nx

    def cell_of(self, x: float, y: float) -> int:
        ix = int(math.floor((x - self.origin[0]) / self.cell_size))
        iy = int(math.floor((y - self.origin[1]) / self.cell_size))
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise ValueError(f"point ({x}, {y}) is outside the grid")
        return self.index(ix, iy)

    def centers(self) -> np.ndarray:
        """(n_cells, 2) array of cell centers ordered by linear index."""
        ix, iy = self.unravel(np.arange(self.n_cells))
        return np.column_stack([self.origin[0] + (ix + 0.5) * self.cell_size,
                                self.origin[1] + (iy + 0.5) * self.cell_size])

    def center(self, k: int) -> np.ndarray:
        ix, iy = self.unravel(k)
        return np.array([self.origin[0] + (ix + 0.5) * self.cell_size,
                         self.origin[1] + (iy + 0.5) * self.cell_size])

    def kernel_args(self) -> tuple:
        zlo, zhi = self.z_range
        return (self.origin[0], self.origin[1], float(self.cell_size),
                int(self.nx), int(self.ny), zlo, zhi)


def _check_origin(scene: Scene, origin) -> np.ndarray:
    o = np.asarray(origin, float).reshape(3)
    if not scene.contains(o):
        lo, hi = scene.bounds
        raise OriginOutsideScene(f"origin {o.tolist()} outside bounds {lo.tolist()}..{hi.tolist()}")
    return o


def trace(scene: Scene, origin, angle: LaunchAngle,
          max_bounces: int = DEFAULT_MAX_BOUNCES, source_bs: int = -1) -> RayPath:
    """Follow specular reflections from ``origin`` for at most ``max_bounces``.

    The path stops at the first hit after the bounce budget is spent, or on
    the bounding box when the ray escapes the geometry.
    """
    if max_bounces < 0:
        raise ValueError("max_bounces must be >= 0")
    o = _check_origin(scene, origin)
    d = angle.to_vector()
    verts = np.empty((max_bounces + 2, 3))
    normals = np.empty((max_bounces + 1, 3))
    tris = np.empty(max_bounces + 1, np.int64)
    lo, hi = scene.bounds
    nv, nb, esc = _kernels.trace_into(o, d, max_bounces, *scene.packed(), lo, hi,
                                      verts, normals, tris)
    return RayPath(verts[:nv].copy(), int(nb), angle, source_bs, bool(esc),
                   normals[:nb].copy(), tuple(int(t) for t in tris[:nb]))


def trace_direction(scene: Scene, origin, direction, max_bounces: int = DEFAULT_MAX_BOUNCES) -> RayPath:
    """Like ``trace`` but from a unit vector rather than a launch angle."""
    d = np.asarray(direction, float)
    return trace(scene, origin, LaunchAngle.from_vector(d / np.linalg.norm(d)), max_bounces)


def segment_cells(p0, p1, grid: CellGrid) -> set:
    """Linear indices of the cells whose box the segment p0-p1 intersects."""
    buf = np.empty(grid.nx + grid.ny + 4, np.int64)
    m = _kernels.segment_cells(float(p0[0]), float(p0[1]), float(p0[2]),
                               float(p1[0]), float(p1[1]), float(p1[2]),
                               *grid.kernel_args(), buf)
    return set(buf[:m].tolist())


def cells_crossed(path: RayPath, grid: CellGrid) -> set:
    """Union over the path's segments of the cells each one crosses."""
    out: set = set()
    for a, b in path.segments:
        out |= segment_cells(a, b, grid)
    return out


def cell_pairs(cells: Iterable[int], grid: CellGrid) -> set:
    """Convert linear indices to ``(ix, iy)`` tuples."""
    return {(int(k) % grid.nx, int(k) // grid.nx) for k in cells}


def accumulate(scene: Scene, origin, dirs: np.ndarray, weights: np.ndarray,
               grid: CellGrid, max_bounces: int = DEFAULT_MAX_BOUNCES,
               skip_zero: bool = False,
               counts: Optional[np.ndarray] = None,
               wsum: Optional[np.ndarray] = None) -> tuple:
    """Trace a fan of rays from one origin and tally cell crossings.

    Returns ``(counts, weight_sums)`` arrays of length ``grid.n_cells``. Passing
    existing arrays adds into them, which is how partial tallies merge.
    """
    o = _check_origin(scene, origin)
    dirs = np.ascontiguousarray(dirs, float).reshape(-1, 3)
    weights = np.ascontiguousarray(weights, float).reshape(-1)
    if counts is None:
        counts = np.zeros(grid.n_cells, np.int64)
    if wsum is None:
        wsum = np.zeros(grid.n_cells, float)
    lo, hi = scene.bounds
    _kernels.accumulate_rays(o, dirs, weights, skip_zero, int(max_bounces),
                             *scene.packed(), lo, hi, *grid.kernel_args(),
                             counts, wsum)
    return counts, wsum


def fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic, nearly uniform unit vectors on the sphere (n, 3)."""
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * (math.pi * (3.0 - math.sqrt(5.0)))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])

