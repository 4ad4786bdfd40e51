"""Compiled inner loops for tracing, grid traversal and accumulation.

Everything here works on flat float64/int64 arrays so it can be jitted with
numba in nopython mode. The public wrappers live in ``geometry``, ``rays``,
``aoa`` and ``estimator``.
"""

import math

import numpy as np
from numba import njit

EPS_HIT = 1e-6
EPS_BARY = 1e-10
_INF = np.inf


@njit(cache=True)
def _tri_t(ox, oy, oz, dx, dy, dz, v0, e1, e2, k, tmin, tmax):
    """Two-sided Moller-Trumbore. Returns t in (tmin, tmax) or -1."""
    e1x = e1[k, 0]
    e1y = e1[k, 1]
    e1z = e1[k, 2]
    e2x = e2[k, 0]
    e2y = e2[k, 1]
    e2z = e2[k, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return -1.0
    inv = 1.0 / det
    sx = ox - v0[k, 0]
    sy = oy - v0[k, 1]
    sz = oz - v0[k, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -EPS_BARY or u > 1.0 + EPS_BARY:
        return -1.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -EPS_BARY or u + v > 1.0 + EPS_BARY:
        return -1.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= tmin or t >= tmax:
        return -1.0
    return t


@njit(cache=True)
def _box_entry(ox, oy, oz, dx, dy, dz, bmin, bmax, k, tmax):
    """Slab test against node k. Returns entry distance or inf on a miss."""
    t0 = -_INF
    t1 = tmax
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for a in range(3):
        lo = bmin[k, a]
        hi = bmax[k, a]
        if d[a] == 0.0:
            if o[a] < lo or o[a] > hi:
                return _INF
            continue
        inv = 1.0 / d[a]
        ta = (lo - o[a]) * inv
        tb = (hi - o[a]) * inv
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return _INF
    if t1 < 0.0:
        return _INF
    return t0


@njit(cache=True)
def nearest_hit(ox, oy, oz, dx, dy, dz, tmin, v0, e1, e2,
                bmin, bmax, left, right, start, count, order, stack):
    """Closest triangle with t > tmin. Returns (t, index); index -1 on a miss.

    ``stack`` is int64 scratch space with room for one entry per node.
    """
    best_t = _INF
    best_k = -1
    if bmin.shape[0] == 0:
        return best_t, best_k
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_entry(ox, oy, oz, dx, dy, dz, bmin, bmax, node, best_t) == _INF:
            continue
        if left[node] < 0:
            s = start[node]
            for j in range(s, s + count[node]):
                k = order[j]
                t = _tri_t(ox, oy, oz, dx, dy, dz, v0, e1, e2, k, tmin, best_t)
                if t > 0.0:
                    best_t = t
                    best_k = k
        else:
            a = left[node]
            b = right[node]
            ta = _box_entry(ox, oy, oz, dx, dy, dz, bmin, bmax, a, best_t)
            tb = _box_entry(ox, oy, oz, dx, dy, dz, bmin, bmax, b, best_t)
            # push the farther child first so the nearer one is popped next
            if ta <= tb:
                if tb != _INF:
                    stack[sp] = b
                    sp += 1
                if ta != _INF:
                    stack[sp] = a
                    sp += 1
            else:
                if ta != _INF:
                    stack[sp] = a
                    sp += 1
                if tb != _INF:
                    stack[sp] = b
                    sp += 1
    return best_t, best_k


@njit(cache=True)
def box_exit(ox, oy, oz, dx, dy, dz, lo, hi):
    """Distance to leave the axis-aligned box [lo, hi] from an interior point."""
    t = _INF
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for a in range(3):
        if d[a] > 0.0:
            ta = (hi[a] - o[a]) / d[a]
        elif d[a] < 0.0:
            ta = (lo[a] - o[a]) / d[a]
        else:
            continue
        if ta < t:
            t = ta
    if t < 0.0:
        t = 0.0
    return t


@njit(cache=True)
def trace_into(o, d, max_bounces, v0, e1, e2, nrm, bmin, bmax, left, right,
               start, count, order, lo, hi, verts, normals, tris):
    """Specular bounce path from ``o`` along unit ``d``.

    Writes up to ``max_bounces + 2`` vertices into ``verts``. Returns
    (n_vertices, n_bounces, escaped).
    """
    ox = o[0]
    oy = o[1]
    oz = o[2]
    dx = d[0]
    dy = d[1]
    dz = d[2]
    verts[0, 0] = ox
    verts[0, 1] = oy
    verts[0, 2] = oz
    n = 1
    b = 0
    stack = np.empty(bmin.shape[0] + 1, np.int64)
    while True:
        t, k = nearest_hit(ox, oy, oz, dx, dy, dz, EPS_HIT, v0, e1, e2,
                           bmin, bmax, left, right, start, count, order, stack)
        if k < 0:
            te = box_exit(ox, oy, oz, dx, dy, dz, lo, hi)
            verts[n, 0] = ox + te * dx
            verts[n, 1] = oy + te * dy
            verts[n, 2] = oz + te * dz
            return n + 1, b, True
        ox = ox + t * dx
        oy = oy + t * dy
        oz = oz + t * dz
        verts[n, 0] = ox
        verts[n, 1] = oy
        verts[n, 2] = oz
        n += 1
        if b == max_bounces:
            return n, b, False
        nx = nrm[k, 0]
        ny = nrm[k, 1]
        nz = nrm[k, 2]
        dn = dx * nx + dy * ny + dz * nz
        if dn > 0.0:
            nx = -nx
            ny = -ny
            nz = -nz
            dn = -dn
        dx = dx - 2.0 * dn * nx
        dy = dy - 2.0 * dn * ny
        dz = dz - 2.0 * dn * nz
        inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
        dx *= inv
        dy *= inv
        dz *= inv
        normals[b, 0] = nx
        normals[b, 1] = ny
        normals[b, 2] = nz
        tris[b] = k
        b += 1


@njit(cache=True)
def segment_cells(x0, y0, z0, x1, y1, z1, gx0, gy0, cs, nx, ny, zlo, zhi, out):
    """Linear indices (iy * nx + ix) of grid cells crossed by a segment.

    A cell is the box [cell footprint] x [zlo, zhi]. The segment is clipped to
    the slab and to the grid rectangle, then walked with an Amanatides-Woo
    traversal. Returns the number of indices written to ``out``.
    """
    dx = x1 - x0
    dy = y1 - y0
    dz = z1 - z0
    s0 = 0.0
    s1 = 1.0
    if dz == 0.0:
        if z0 < zlo or z0 > zhi:
            return 0
    else:
        sa = (zlo - z0) / dz
        sb = (zhi - z0) / dz
        if sa > sb:
            sa, sb = sb, sa
        s0 = max(s0, sa)
        s1 = min(s1, sb)
    gx1 = gx0 + nx * cs
    gy1 = gy0 + ny * cs
    if dx == 0.0:
        if x0 < gx0 or x0 > gx1:
            return 0
    else:
        sa = (gx0 - x0) / dx
        sb = (gx1 - x0) / dx
        if sa > sb:
            sa, sb = sb, sa
        s0 = max(s0, sa)
        s1 = min(s1, sb)
    if dy == 0.0:
        if y0 < gy0 or y0 > gy1:
            return 0
    else:
        sa = (gy0 - y0) / dy
        sb = (gy1 - y0) / dy
        if sa > sb:
            sa, sb = sb, sa
        s0 = max(s0, sa)
        s1 = min(s1, sb)
    if s0 > s1:
        return 0

    xa = x0 + s0 * dx
    ya = y0 + s0 * dy
    ix = int(math.floor((xa - gx0) / cs))
    iy = int(math.floor((ya - gy0) / cs))
    ix = min(max(ix, 0), nx - 1)
    iy = min(max(iy, 0), ny - 1)

    if dx > 0.0:
        step_x = 1
        tmax_x = (gx0 + (ix + 1) * cs - x0) / dx
        tdelta_x = cs / dx
    elif dx < 0.0:
        step_x = -1
        tmax_x = (gx0 + ix * cs - x0) / dx
        tdelta_x = -cs / dx
    else:
        step_x = 0
        tmax_x = _INF
        tdelta_x = _INF
    if dy > 0.0:
        step_y = 1
        tmax_y = (gy0 + (iy + 1) * cs - y0) / dy
        tdelta_y = cs / dy
    elif dy < 0.0:
        step_y = -1
        tmax_y = (gy0 + iy * cs - y0) / dy
        tdelta_y = -cs / dy
    else:
        step_y = 0
        tmax_y = _INF
        tdelta_y = _INF

    out[0] = iy * nx + ix
    c = 1
    cap = out.shape[0]
    while c < cap:
        if tmax_x < tmax_y:
            if tmax_x > s1:
                break
            ix += step_x
            tmax_x += tdelta_x
        else:
            if tmax_y > s1:
                break
            iy += step_y
            tmax_y += tdelta_y
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
            break
        out[c] = iy * nx + ix
        c += 1
    return c


@njit(cache=True)
def accumulate_rays(o, dirs, weights, skip_zero, max_bounces,
                    v0, e1, e2, nrm, bmin, bmax, left, right, start, count,
                    order, lo, hi, gx0, gy0, cs, nx, ny, zlo, zhi,
                    counts, wsum):
    """Trace every ray from ``o`` and tally, per cell, how many rays cross it
    and the sum of their weights. A ray counts at most once per cell."""
    ncells = nx * ny
    stamp = np.full(ncells, -1, np.int64)
    verts = np.empty((max_bounces + 2, 3))
    normals = np.empty((max_bounces + 1, 3))
    tris = np.empty(max_bounces + 1, np.int64)
    buf = np.empty(nx + ny + 4, np.int64)
    for r in range(dirs.shape[0]):
        w = weights[r]
        if skip_zero and w == 0.0:
            continue
        nv, nb, esc = trace_into(o, dirs[r], max_bounces, v0, e1, e2, nrm,
                                 bmin, bmax, left, right, start, count, order,
                                 lo, hi, verts, normals, tris)
        for s in range(nv - 1):
            m = segment_cells(verts[s, 0], verts[s, 1], verts[s, 2],
                              verts[s + 1, 0], verts[s + 1, 1], verts[s + 1, 2],
                              gx0, gy0, cs, nx, ny, zlo, zhi, buf)
            for j in range(m):
                cell = buf[j]
                if stamp[cell] != r:
                    stamp[cell] = r
                    counts[cell] += 1
                    wsum[cell] += w


@njit(cache=True)
def probe_capture(o, dirs, max_bounces, v0, e1, e2, nrm, bmin, bmax, left,
                  right, start, count, order, lo, hi, bs_pos, radius,
                  hit, arrival, plen):
    """For each probe ray and each BS, find the path segment passing closest
    to the BS. When within ``radius``, record the arrival direction (segment
    direction reversed) and the path length up to the closest point."""
    nbs = bs_pos.shape[0]
    verts = np.empty((max_bounces + 2, 3))
    normals = np.empty((max_bounces + 1, 3))
    tris = np.empty(max_bounces + 1, np.int64)
    best = np.empty(nbs)
    for r in range(dirs.shape[0]):
        nv, nb, esc = trace_into(o, dirs[r], max_bounces, v0, e1, e2, nrm,
                                 bmin, bmax, left, right, start, count, order,
                                 lo, hi, verts, normals, tris)
        for m in range(nbs):
            best[m] = _INF
            hit[r, m] = False
        walked = 0.0
        for s in range(nv - 1):
            ax = verts[s, 0]
            ay = verts[s, 1]
            az = verts[s, 2]
            sx = verts[s + 1, 0] - ax
            sy = verts[s + 1, 1] - ay
            sz = verts[s + 1, 2] - az
            seg2 = sx * sx + sy * sy + sz * sz
            if seg2 == 0.0:
                continue
            seg = math.sqrt(seg2)
            for m in range(nbs):
                px = bs_pos[m, 0] - ax
                py = bs_pos[m, 1] - ay
                pz = bs_pos[m, 2] - az
                u = (px * sx + py * sy + pz * sz) / seg2
                if u < 0.0:
                    u = 0.0
                elif u > 1.0:
                    u = 1.0
                qx = px - u * sx
                qy = py - u * sy
                qz = pz - u * sz
                dist = math.sqrt(qx * qx + qy * qy + qz * qz)
                if dist <= radius[m] and dist < best[m]:
                    best[m] = dist
                    hit[r, m] = True
                    arrival[r, m, 0] = -sx / seg
                    arrival[r, m, 1] = -sy / seg
                    arrival[r, m, 2] = -sz / seg
                    plen[r, m] = walked + u * seg
            walked += seg
