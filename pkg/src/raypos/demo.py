"""Demo industrial hall: an open area at one end and shelving alleys at the other."""

from __future__ import annotations

from typing import Sequence

from .aoa import BaseStation
from .geometry import Scene, box_triangles, merge

HALL = (8.0, 18.0, 2.5)


def demo_scene(n_racks: int = 4, rack_width: float = 0.6, rack_height: float = 2.5,
               rack_y: tuple = (8.5, 16.5), wall_gap: float = 1.0,
               machines: bool = True) -> Scene:
    """Closed 8 x 18 x 2.5 m hall with ``n_racks`` shelving racks running along y.

    Racks are spread evenly across x, leaving ``wall_gap`` meters between the
    outer racks and the side walls. The default height makes them floor-to-ceiling. The y < ``rack_y[0]`` part is an open area
    with a few machine blocks when ``machines`` is set.
    """
    w, l, h = HALL
    parts = [box_triangles((0.0, 0.0, 0.0), (w, l, h))]
    if n_racks > 0:
        span = w - 2 * wall_gap - rack_width
        xs = [wall_gap + (span * i / (n_racks - 1) if n_racks > 1 else span / 2)
              for i in range(n_racks)]
        for x in xs:
            parts.append(box_triangles((x, rack_y[0], 0.0), (x + rack_width, rack_y[1], rack_height)))
    if machines:
        parts.append(box_triangles((1.6, 2.2, 0.0), (2.8, 3.4, 1.6)))
        parts.append(box_triangles((5.2, 4.2, 0.0), (6.4, 5.6, 1.4)))
        parts.append(box_triangles((3.6, 6.4, 0.0), (4.4, 6.8, 2.5)))  # pillar
    return Scene(merge(parts), bounds=((0.0, 0.0, 0.0), HALL), name="demo_hall")


def demo_base_stations(sigma: float = 0.0, inset: float = 0.3, drop: float = 0.3,
                       capture_radius: float = 0.15) -> list:
    """Four BS in the top corners, ``inset`` from the walls and ``drop`` below
    the ceiling (both larger than the capture radius)."""
    w, l, h = HALL
    z = h - drop
    corners = [(inset, inset), (w - inset, inset), (inset, l - inset), (w - inset, l - inset)]
    return [BaseStation((x, y, z), capture_radius, sigma, i) for i, (x, y) in enumerate(corners)]


def base_stations_from(rows: Sequence) -> list:
    return [BaseStation(tuple(r), index=i) for i, r in enumerate(rows)]
