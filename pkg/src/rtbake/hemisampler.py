"""Evenly distributed hemisphere direction sets.

Directions are generated offline as 2D points in the unit disk and projected
up to the z >= 0 hemisphere. Starting from four seeded random points, each
step inserts the center of the largest empty circle: the candidate site
(a Voronoi vertex inside the disk, or a Voronoi edge's intersection with the
disk boundary) farthest from its nearest existing point. Insertion order is
preserved so any prefix of a generated set is itself an evenly spread set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Voronoi

MAX_DIRECTIONS = 1024
MIN_DIRECTIONS = 4
_BOUNDARY_TOL = 1e-12


@dataclass
class DirectionSet:
    points: np.ndarray       # (k, 2) unit-disk samples, insertion order
    directions: np.ndarray   # (k, 3) unit vectors, z >= 0
    clearances: np.ndarray = field(default_factory=lambda: np.empty(0))
    # clearances[i] = distance from point i to its nearest predecessor
    # (undefined for the 4 seed points, stored as +inf)

    def __len__(self) -> int:
        return self.points.shape[0]

    def nearest_neighbor_distances(self) -> np.ndarray:
        d = np.linalg.norm(self.points[:, None, :] - self.points[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        return d.min(axis=1)


def project_to_hemisphere(p) -> np.ndarray:
    """Lift a unit-disk point (x, y) to (x, y, sqrt(1 - x^2 - y^2))."""
    x, y = float(p[0]), float(p[1])
    rr = x * x + y * y
    if rr > 1.0 + 1e-9:
        raise ValueError(f"point ({x}, {y}) lies outside the unit disk")
    return np.array([x, y, np.sqrt(max(0.0, 1.0 - rr))])


def _circle_hits(p0: np.ndarray, d: np.ndarray, t_lo: float, t_hi: float) -> list[np.ndarray]:
    """Intersections of the segment/ray p0 + t*d, t in [t_lo, t_hi], with the unit circle."""
    a = float(d @ d)
    if a == 0.0:
        return []
    b = 2.0 * float(p0 @ d)
    c = float(p0 @ p0) - 1.0
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return []
    sq = np.sqrt(disc)
    hits = []
    for t in ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)):
        if t_lo - _BOUNDARY_TOL <= t <= t_hi:
            hits.append(p0 + t * d)
    return hits


def _candidate_sites(points: np.ndarray) -> list[np.ndarray]:
    vor = Voronoi(points)
    center = points.mean(axis=0)
    sites: list[np.ndarray] = []
    for v in vor.vertices:
        if v @ v < 1.0:
            sites.append(v.copy())
    for (p1, p2), (r1, r2) in zip(vor.ridge_points, vor.ridge_vertices):
        if r1 >= 0 and r2 >= 0:
            v0, v1 = vor.vertices[r1], vor.vertices[r2]
            sites.extend(_circle_hits(v0, v1 - v0, 0.0, 1.0))
        else:
            # infinite ridge: ray from the finite vertex, perpendicular to the
            # generator pair, pointing away from the point cloud center
            vtx = vor.vertices[r2 if r1 < 0 else r1]
            tangent = points[p2] - points[p1]
            tangent /= np.linalg.norm(tangent)
            normal = np.array([-tangent[1], tangent[0]])
            mid = 0.5 * (points[p1] + points[p2])
            if (mid - center) @ normal < 0.0:
                normal = -normal
            sites.extend(_circle_hits(vtx, normal, 0.0, np.inf))
    return sites


def generate_directions(count: int, seed: int) -> DirectionSet:
    """Greedy largest-empty-circle insertion of `count` hemisphere directions."""
    if not (MIN_DIRECTIONS <= count <= MAX_DIRECTIONS):
        raise ValueError(f"count {count} outside [{MIN_DIRECTIONS}, {MAX_DIRECTIONS}]")
    rng = np.random.default_rng(seed)
    points = []
    while len(points) < MIN_DIRECTIONS:
        p = rng.uniform(-1.0, 1.0, size=2)
        if p @ p <= 1.0:
            points.append(p)
    pts = np.array(points)
    clearances = [np.inf] * MIN_DIRECTIONS

    while pts.shape[0] < count:
        sites = _candidate_sites(pts)
        if not sites:  # cannot happen for >= 4 disk points
            raise RuntimeError("no candidate site found")
        cand = np.array(sites)
        dists = np.linalg.norm(cand[:, None, :] - pts[None, :, :], axis=2)
        clear = dists.min(axis=1)
        best = int(np.argmax(clear))
        pts = np.vstack([pts, cand[best]])
        clearances.append(float(clear[best]))

    dirs = np.array([project_to_hemisphere(p) for p in pts])
    return DirectionSet(points=pts, directions=dirs, clearances=np.array(clearances))


def save_directions(ds: DirectionSet, path) -> None:
    """Plain-text table: header 'rtdirs <count>', then one 'x y z' per line."""
    lines = [f"rtdirs {len(ds)}"]
    for d in ds.directions:
        lines.append(f"{d[0]:.9g} {d[1]:.9g} {d[2]:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_directions(path) -> DirectionSet:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("rtdirs "):
        raise ValueError(f"{path}: not a direction table")
    count = int(text[0].split()[1])
    rows = [[float(x) for x in line.split()] for line in text[1:count + 1]]
    if len(rows) != count:
        raise ValueError(f"{path}: expected {count} directions, found {len(rows)}")
    dirs = np.array(rows)
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]  # restore exact unit length
    return DirectionSet(points=dirs[:, :2].copy(), directions=dirs)
