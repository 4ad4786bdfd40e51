"""Scene model (triangle soup) with exact ray intersection and reflection."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import _kernels
from .errors import SceneLoadError

EPS_AREA = 1e-9
EPS_GEOM = 1e-6
EPS_HIT = _kernels.EPS_HIT
_LEAF_SIZE = 4
_MIN_EXTENT = 1e-3
# wavefront records that carry no geometry we use
_IGNORED_RECORDS = {"vt", "vn", "vp", "o", "g", "s", "mtllib", "usemtl", "l"}


@dataclass(frozen=True)
class Triangle:
    v0: tuple
    v1: tuple
    v2: tuple

    @property
    def normal(self) -> np.ndarray:
        """Unit normal following the right-hand winding v0 -> v1 -> v2."""
        a = np.asarray(self.v0, float)
        n = np.cross(np.asarray(self.v1, float) - a, np.asarray(self.v2, float) - a)
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        a = np.asarray(self.v0, float)
        n = np.cross(np.asarray(self.v1, float) - a, np.asarray(self.v2, float) - a)
        return 0.5 * float(np.linalg.norm(n))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, float).reshape(3)
        d = np.asarray(self.direction, float).reshape(3)
        norm = np.linalg.norm(d)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got norm {norm}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def towards(cls, origin, target) -> "Ray":
        o = np.asarray(origin, float)
        d = np.asarray(target, float) - o
        return cls(o, d / np.linalg.norm(d))


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    normal: np.ndarray
    triangle_index: int


def _surface_area(lo, hi) -> np.ndarray:
    e = np.maximum(hi - lo, 0.0)
    return 2.0 * (e[..., 0] * e[..., 1] + e[..., 1] * e[..., 2] + e[..., 2] * e[..., 0])


class _BVH:
    """Flattened bounding-volume hierarchy built with a full-sweep surface
    area heuristic, so large wall triangles end up in their own shallow nodes."""

    def __init__(self, tris: np.ndarray):
        n = tris.shape[0]
        self.bmin: list = []
        self.bmax: list = []
        self.left: list = []
        self.right: list = []
        self.start: list = []
        self.count: list = []
        self._order = np.arange(n, dtype=np.int64)
        if n:
            self._build(tris.min(axis=1), tris.max(axis=1), tris.mean(axis=1), 0, n)
        self.arrays = (
            np.asarray(self.bmin, float).reshape(-1, 3),
            np.asarray(self.bmax, float).reshape(-1, 3),
            np.asarray(self.left, np.int64),
            np.asarray(self.right, np.int64),
            np.asarray(self.start, np.int64),
            np.asarray(self.count, np.int64),
            self._order,
        )

    def _build(self, lo, hi, centroid, s, e) -> int:
        idx = self._order[s:e]
        node = len(self.bmin)
        # pad boxes so axis-aligned triangles never produce zero-thickness slabs
        nlo = lo[idx].min(axis=0) - EPS_GEOM
        nhi = hi[idx].max(axis=0) + EPS_GEOM
        self.bmin.append(nlo)
        self.bmax.append(nhi)
        self.left.append(-1)
        self.right.append(-1)
        self.start.append(s)
        self.count.append(e - s)
        n = e - s
        if n <= 2:
            return node
        best = (n * _surface_area(nlo, nhi), None, None)
        for axis in range(3):
            srt = idx[np.argsort(centroid[idx, axis], kind="stable")]
            llo = np.minimum.accumulate(lo[srt], axis=0)
            lhi = np.maximum.accumulate(hi[srt], axis=0)
            rlo = np.minimum.accumulate(lo[srt][::-1], axis=0)[::-1]
            rhi = np.maximum.accumulate(hi[srt][::-1], axis=0)[::-1]
            k = np.arange(1, n)
            cost = k * _surface_area(llo[:-1], lhi[:-1]) + (n - k) * _surface_area(rlo[1:], rhi[1:])
            j = int(np.argmin(cost))
            # half a triangle test per box test: splitting must beat the leaf
            if cost[j] + 0.5 * n * _surface_area(nlo, nhi) < best[0]:
                best = (cost[j] + 0.5 * n * _surface_area(nlo, nhi), srt, j + 1)
        if best[1] is None:
            if n <= _LEAF_SIZE:
                return node
            axis = int(np.argmax(np.ptp(centroid[idx], axis=0)))
            best = (None, idx[np.argsort(centroid[idx, axis], kind="stable")], n // 2)
        self._order[s:e] = best[1]
        mid = s + best[2]
        self.count[node] = 0
        self.left[node] = self._build(lo, hi, centroid, s, mid)
        self.right[node] = self._build(lo, hi, centroid, mid, e)
        return node


class Scene:
    """Immutable triangle soup inside an axis-aligned bounding box.

    Args:
        triangles: array-like of shape (T, 3, 3) or a sequence of ``Triangle``.
        bounds: ``(lo, hi)`` corners in meters. Defaults to the triangles' AABB
            (flat axes padded by 1 mm); required when the scene is empty.
        name: free-form label.
    """

    def __init__(self, triangles, bounds=None, name: str = "scene"):
        if len(triangles) and isinstance(triangles[0], Triangle):
            arr = np.array([[t.v0, t.v1, t.v2] for t in triangles], float)
        else:
            arr = np.asarray(triangles, float).reshape(-1, 3, 3)
        if bounds is None:
            if arr.shape[0] == 0:
                raise SceneLoadError("an empty scene needs explicit bounds")
            lo, hi = arr.reshape(-1, 3).min(axis=0), arr.reshape(-1, 3).max(axis=0)
            # planar geometry: give flat axes some thickness
            flat = hi - lo < _MIN_EXTENT
            lo, hi = np.where(flat, lo - _MIN_EXTENT, lo), np.where(flat, hi + _MIN_EXTENT, hi)
        else:
            lo, hi = (np.asarray(b, float).reshape(3) for b in bounds)
        if np.any(hi <= lo):
            raise SceneLoadError(f"degenerate bounds {lo} .. {hi}")

        e1 = arr[:, 1] - arr[:, 0]
        e2 = arr[:, 2] - arr[:, 0]
        cross = np.cross(e1, e2)
        norm = np.linalg.norm(cross, axis=1)
        bad = np.flatnonzero(0.5 * norm <= EPS_AREA)
        if bad.size:
            raise SceneLoadError(f"degenerate triangle(s) at index {bad[:5].tolist()}")
        pts = arr.reshape(-1, 3)
        if pts.size and (np.any(pts < lo - EPS_GEOM) or np.any(pts > hi + EPS_GEOM)):
            raise SceneLoadError("triangle vertices lie outside the scene bounds")

        self.name = name
        self.tris = arr
        self.tris.setflags(write=False)
        self.bounds = (lo, hi)
        self.normals = cross / norm[:, None] if arr.shape[0] else np.zeros((0, 3))
        self._v0 = np.ascontiguousarray(arr[:, 0])
        self._e1 = np.ascontiguousarray(e1)
        self._e2 = np.ascontiguousarray(e2)
        self._bvh = _BVH(arr)

    def __len__(self) -> int:
        return self.tris.shape[0]

    def __repr__(self) -> str:
        return f"Scene({self.name!r}, {len(self)} triangles)"

    @property
    def triangles(self) -> list:
        return [Triangle(tuple(t[0]), tuple(t[1]), tuple(t[2])) for t in self.tris]

    @property
    def size(self) -> np.ndarray:
        return self.bounds[1] - self.bounds[0]

    def contains(self, point, eps: float = EPS_GEOM) -> bool:
        p = np.asarray(point, float)
        lo, hi = self.bounds
        return bool(np.all(p >= lo - eps) and np.all(p <= hi + eps))

    def packed(self) -> tuple:
        """Arrays in the order the compiled kernels expect after (o, d, ...)."""
        return (self._v0, self._e1, self._e2, self.normals) + self._bvh.arrays

    def translated(self, offset) -> "Scene":
        off = np.asarray(offset, float)
        lo, hi = self.bounds
        return Scene(self.tris + off, (lo + off, hi + off), self.name)

    def clearance(self, point) -> float:
        """Euclidean distance from ``point`` to the nearest triangle."""
        if len(self) == 0:
            return np.inf
        return float(np.min(point_triangle_distance(point, self.tris)))

    def crossings(self, point, direction=(0.2113, 0.1234, 0.9693)) -> int:
        """Number of surfaces crossed by a ray from ``point`` (parity test)."""
        if len(self) == 0:
            return 0
        d = np.asarray(direction, float)
        d = d / np.linalg.norm(d)
        t = _all_hits(np.asarray(point, float), d, self.tris)
        return int(np.count_nonzero(t > 0))


def reflect(direction, normal) -> np.ndarray:
    """Mirror ``direction`` about the plane with unit ``normal``: d - 2(d.n)n."""
    d = np.asarray(direction, float)
    n = np.asarray(normal, float)
    return d - 2.0 * np.dot(d, n) * n


def intersect(ray: Ray, scene: Scene) -> Optional[Hit]:
    """Nearest intersection with t > EPS_HIT, or None when the ray escapes."""
    o, d = ray.origin, ray.direction
    v0, e1, e2, nrm, *bvh = scene.packed()
    stack = np.empty(len(bvh[0]) + 1, np.int64)
    t, k = _kernels.nearest_hit(o[0], o[1], o[2], d[0], d[1], d[2], EPS_HIT,
                                v0, e1, e2, *bvh, stack)
    if k < 0:
        return None
    n = nrm[k]
    if np.dot(n, d) > 0:
        n = -n
    return Hit(float(t), o + t * d, n.copy(), int(k))


def _all_hits(o, d, tris) -> np.ndarray:
    """Vectorized two-sided intersection of one ray with every triangle.
    Returns t per triangle, -1 where missed."""
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = o - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = (q @ d) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    ok &= (u >= 0) & (v >= 0) & (u + v <= 1)
    return np.where(ok, t, -1.0)


def point_triangle_distance(point, tris) -> np.ndarray:
    """Distance from one point to each triangle in a (T, 3, 3) array."""
    p = np.asarray(point, float)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    n = np.cross(ab, ac)
    n /= np.linalg.norm(n, axis=1)[:, None]
    # projection onto the plane; inside test by barycentrics
    dist_plane = np.einsum("ij,ij->i", ap, n)
    proj = p - dist_plane[:, None] * n
    v0, v1, v2 = ab, ac, proj - a
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    den = d00 * d11 - d01 * d01
    bv = (d11 * d20 - d01 * d21) / den
    bw = (d00 * d21 - d01 * d20) / den
    inside = (bv >= 0) & (bw >= 0) & (bv + bw <= 1)
    best = np.where(inside, np.abs(dist_plane), np.inf)
    for s, e in ((a, b), (b, c), (c, a)):
        se = e - s
        u = np.clip(np.einsum("ij,ij->i", p - s, se) / np.einsum("ij,ij->i", se, se), 0, 1)
        q = s + u[:, None] * se
        best = np.minimum(best, np.linalg.norm(p - q, axis=1))
    return best


def box_triangles(lo, hi) -> np.ndarray:
    """Twelve triangles covering the faces of an axis-aligned box."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    c = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ], float)
    quads = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
             (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
    out = []
    for a, b, cc, d in quads:
        out.append([c[a], c[b], c[cc]])
        out.append([c[a], c[cc], c[d]])
    return np.array(out)


def quad_triangles(p0, p1, p2, p3) -> np.ndarray:
    """Two triangles for the planar quad p0-p1-p2-p3."""
    p = [np.asarray(x, float) for x in (p0, p1, p2, p3)]
    return np.array([[p[0], p[1], p[2]], [p[0], p[2], p[3]]])


def load_scene(path, bounds=None, name: Optional[str] = None) -> Scene:
    """Read the ``v``/``f`` subset of the wavefront mesh format.

    Faces with more than three vertices are fan-triangulated; ``v/vt/vn``
    index forms keep only the vertex index. Normals, texture coordinates,
    groups and materials are skipped. A ``# bounds x0 y0 z0 x1 y1 z1``
    comment, when present, sets the scene box.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SceneLoadError(f"cannot read scene {path}: {exc}") from exc
    verts: list = []
    faces: list = []
    file_bounds = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "bounds" and len(parts) == 7:
                vals = [float(x) for x in parts[1:]]
                file_bounds = (vals[:3], vals[3:])
            continue
        parts = line.split("#", 1)[0].split()
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(parts) < 4:
                    raise ValueError("vertex needs three coordinates")
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) < 3:
                    raise ValueError("face needs at least three indices")
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for j in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
            elif parts[0] not in _IGNORED_RECORDS:
                raise ValueError(f"unsupported record {parts[0]!r}")
        except (ValueError, IndexError) as exc:
            raise SceneLoadError(f"{path}:{lineno}: {exc}") from exc
    v = np.array(verts, float).reshape(-1, 3)
    f = np.array(faces, np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise SceneLoadError(f"{path}: face index out of range")
    return Scene(v[f], bounds if bounds is not None else file_bounds,
                 name or path.stem)


def save_scene(scene: Scene, path) -> None:
    """Write a scene in the same format ``load_scene`` reads."""
    lo, hi = scene.bounds
    lines = [f"# {scene.name}",
             "# bounds " + " ".join(repr(float(x)) for x in (*lo, *hi))]
    for tri in scene.tris:
        for v in tri:
            lines.append("v " + " ".join(repr(float(x)) for x in v))
    for k in range(len(scene)):
        lines.append(f"f {3 * k + 1} {3 * k + 2} {3 * k + 3}")
    Path(path).write_text("\n".join(lines) + "\n")


def merge(parts: Iterable[np.ndarray]) -> np.ndarray:
    arrs = [np.asarray(p, float).reshape(-1, 3, 3) for p in parts]
    return np.concatenate(arrs) if arrs else np.zeros((0, 3, 3))
