"""Slow, independent reference implementations used to check the fast paths."""

from __future__ import annotations

import itertools
import math

import numpy as np

from raypos.geometry import Scene


def mt_intersect(o, d, tri, eps: float = 1e-12):
    """Moller-Trumbore in plain Python floats; returns t or None (two-sided)."""
    v0, v1, v2 = (np.asarray(v, float) for v in tri)
    e1, e2 = v1 - v0, v2 - v0
    p = np.cross(d, e2)
    det = float(np.dot(e1, p))
    if abs(det) < eps:
        return None
    s = np.asarray(o, float) - v0
    u = float(np.dot(s, p)) / det
    if u < 0.0 or u > 1.0:
        return None
    q = np.cross(s, e1)
    v = float(np.dot(d, q)) / det
    if v < 0.0 or u + v > 1.0:
        return None
    return float(np.dot(e2, q)) / det


def brute_nearest(o, d, tris, tmin: float = 1e-6):
    """Scan every triangle; returns (t, index) of the nearest hit or (inf, -1)."""
    best, k = math.inf, -1
    for i, tri in enumerate(tris):
        t = mt_intersect(o, d, tri)
        if t is not None and tmin < t < best:
            best, k = t, i
    return best, k


def segment_hits_box(p0, p1, lo, hi) -> bool:
    """Liang-Barsky clip of segment p0-p1 against the closed box [lo, hi]."""
    t0, t1 = 0.0, 1.0
    for a in range(3):
        d = p1[a] - p0[a]
        if d == 0.0:
            if p0[a] < lo[a] or p0[a] > hi[a]:
                return False
            continue
        ta = (lo[a] - p0[a]) / d
        tb = (hi[a] - p0[a]) / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return False
    return True


def brute_cells(p0, p1, grid) -> set:
    """Test the segment against every cell box of ``grid``."""
    zlo, zhi = grid.z_range
    out = set()
    for iy in range(grid.ny):
        for ix in range(grid.nx):
            lo = (grid.origin[0] + ix * grid.cell_size, grid.origin[1] + iy * grid.cell_size, zlo)
            hi = (lo[0] + grid.cell_size, lo[1] + grid.cell_size, zhi)
            if segment_hits_box(p0, p1, lo, hi):
                out.add(iy * grid.nx + ix)
    return out


def enumerate_beta(ray_cells, n_cells: int, weights=None) -> np.ndarray:
    """Sum over every choice of one ray per BS of the product of weights,
    counting a cell when all chosen rays cross it."""
    beta = np.zeros(n_cells)
    per_bs = [list(range(len(r))) for r in ray_cells]
    for combo in itertools.product(*per_bs):
        sets = [set(ray_cells[i][j]) for i, j in enumerate(combo)]
        common = set.intersection(*sets) if sets else set()
        w = 1.0
        if weights is not None:
            for i, j in enumerate(combo):
                w *= weights[i][j]
        for k in common:
            beta[k] += w
    return beta


def image_point(point, plane_point, plane_normal) -> np.ndarray:
    """Mirror image of ``point`` across a plane."""
    p = np.asarray(point, float)
    n = np.asarray(plane_normal, float)
    n = n / np.linalg.norm(n)
    return p - 2.0 * np.dot(p - np.asarray(plane_point, float), n) * n


def image_reflection_point(source, target, plane_point, plane_normal) -> np.ndarray:
    """Specular point on the plane for the path source -> plane -> target."""
    img = image_point(target, plane_point, plane_normal)
    s = np.asarray(source, float)
    n = np.asarray(plane_normal, float)
    t = np.dot(np.asarray(plane_point, float) - s, n) / np.dot(img - s, n)
    return s + t * (img - s)


def random_scene(rng, n_tris: int = 100, size: float = 10.0) -> Scene:
    """Exactly ``n_tris`` random triangles (edges up to ~2 m) inside a cube."""
    tris = []
    while len(tris) < n_tris:
        tri = rng.uniform(1.0, size - 1.0, (1, 3)) + rng.uniform(-1.0, 1.0, (3, 3))
        if np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])) > 2e-3:
            tris.append(tri)
    return Scene(np.array(tris), bounds=((0, 0, 0), (size, size, size)))
