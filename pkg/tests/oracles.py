"""Independent reference implementations used as test oracles.

Everything here is deliberately written against different formulations than
the library (plane intersection + area-ratio barycentrics instead of
Moller-Trumbore, linear all-triangle scans instead of BVH traversal, dense
point sampling instead of raster coverage) so agreement is meaningful.
"""

from __future__ import annotations

import numpy as np


def plane_area_intersect(origin, direction, v0, v1, v2, t_min, t_max):
    """Ray/triangle via plane hit + signed-area barycentrics.

    Returns (hit, t, u, v) with u, v matching the (v1-v0, v2-v0) parametrization.
    """
    n = np.cross(v1 - v0, v2 - v0)
    denom = float(n @ direction)
    if abs(denom) < 1e-12:
        return False, 0.0, 0.0, 0.0
    t = float(n @ (v0 - origin)) / denom
    if t < t_min or t > t_max:
        return False, 0.0, 0.0, 0.0
    p = origin + t * direction
    nn = float(n @ n)
    u = float(np.cross(p - v0, v2 - v0) @ n) / nn
    v = float(np.cross(v1 - v0, p - v0) @ n) / nn
    if u < 0.0 or v < 0.0 or u + v > 1.0:
        return False, 0.0, 0.0, 0.0
    return True, t, u, v


def _mt_all_triangles(scene, origins, dirs, t_min, t_max):
    """Vectorized Moller-Trumbore of each ray against every triangle.

    Returns the (Q, T) matrix of hit parameters, +inf where no hit.
    """
    v0 = scene.positions[:, 0]
    e1 = scene.positions[:, 1] - v0
    e2 = scene.positions[:, 2] - v0
    p = np.cross(dirs[:, None, :], e2[None, :, :])
    det = np.einsum("tk,qtk->qt", e1, p)
    safe = np.abs(det) > 1e-12
    inv = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
    tv = origins[:, None, :] - v0[None, :, :]
    u = np.einsum("qtk,qtk->qt", tv, p) * inv
    q = np.cross(tv, e1[None, :, :])
    v = np.einsum("qk,qtk->qt", dirs, q) * inv
    t = np.einsum("tk,qtk->qt", e2, q) * inv
    ok = safe & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1)
    ok &= (t >= t_min[:, None]) & (t <= t_max[:, None])
    return np.where(ok, t, np.inf)


def linear_occluded(scene, a, b, eps):
    """All-triangle occlusion scan; also returns the nearest blocking t.

    nearest_t is +inf for unobstructed pairs and for degenerate pairs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = b - a
    dist = np.linalg.norm(d, axis=1)
    ok = dist > 2 * eps
    dirs = np.where(ok[:, None], d / np.maximum(dist, 1e-300)[:, None], 0.0)
    t_min = np.full(a.shape[0], eps)
    t_max = dist - 2 * eps
    hits = np.full(a.shape[0], np.inf)
    chunk = max(1, (1 << 22) // max(scene.num_triangles, 1))
    for s in range(0, a.shape[0], chunk):
        e = min(a.shape[0], s + chunk)
        t = _mt_all_triangles(scene, a[s:e], dirs[s:e], t_min[s:e], t_max[s:e])
        hits[s:e] = t.min(axis=1)
    hits[~ok] = np.inf
    return np.isfinite(hits), hits


def linear_closest(scene, origins, dirs, t_min, t_max):
    """All-triangle closest hit: (triangle id or -1, t)."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    q = origins.shape[0]
    tmin = np.full(q, t_min)
    tmax = np.full(q, t_max)
    best_tri = np.full(q, -1, dtype=np.int64)
    best_t = np.full(q, np.inf)
    chunk = max(1, (1 << 22) // max(scene.num_triangles, 1))
    for s in range(0, q, chunk):
        e = min(q, s + chunk)
        t = _mt_all_triangles(scene, origins[s:e], dirs[s:e], tmin[s:e], tmax[s:e])
        idx = t.argmin(axis=1)
        tv = t[np.arange(t.shape[0]), idx]
        hit = np.isfinite(tv)
        best_tri[s:e][hit] = idx[hit]
        best_t[s:e][hit] = tv[hit]
    return best_tri, best_t


def count_centers_in_halfplane(res: int) -> int:
    """Texel centers of a res x res map strictly below u + v = 1."""
    count = 0
    for y in range(res):
        for x in range(res):
            u = (x + 0.5) / res
            v = (y + 0.5) / res
            if u + v < 1.0 and u > 0.0 and v > 0.0:
                count += 1
    return count


def reference_voxelize(scene, r: int, samples_per_edge: int = 64) -> np.ndarray:
    """Dense point-sampled voxelization (barycentric lattice per triangle)."""
    lo, hi = scene.bounds
    extent = np.where((hi - lo) > 0, hi - lo, 1.0)
    scale = r / extent
    bits = np.zeros((r, r, r), dtype=np.uint8)
    s = samples_per_edge
    us, vs = np.meshgrid(np.linspace(0, 1, s), np.linspace(0, 1, s))
    mask = us + vs <= 1.0
    uu = us[mask]
    vv = vs[mask]
    for t in range(scene.num_triangles):
        p0, p1, p2 = scene.positions[t]
        pts = (1 - uu - vv)[:, None] * p0 + uu[:, None] * p1 + vv[:, None] * p2
        cells = np.clip(np.floor((pts - lo) * scale).astype(np.int64), 0, r - 1)
        bits[cells[:, 0], cells[:, 1], cells[:, 2]] = 1
    return bits


def dfpr_reference(a: np.ndarray, b: np.ndarray) -> float:
    """Per-texel loop reimplementation of the mean RGB distance."""
    h, w = a.shape[:2]
    total = 0.0
    for y in range(h):
        for x in range(w):
            d = 0.0
            for c in range(3):
                d += (float(a[y, x, c]) - float(b[y, x, c])) ** 2
            total += d ** 0.5
    return total / (h * w)


def gradient_reference(lig, nrm) -> float:
    """Scalar-loop reimplementation of the refinement gradient."""
    lig = [list(map(float, row)) for row in np.asarray(lig).reshape(4, -1)]
    nrm = [list(map(float, row)) for row in np.asarray(nrm).reshape(4, -1)]

    def mean(rows):
        return [sum(r[c] for r in rows) / 4.0 for c in range(len(rows[0]))]

    def dist(p, q):
        return sum((pc - qc) ** 2 for pc, qc in zip(p, q)) ** 0.5

    return 0.5 * dist(lig[0], mean(lig)) + 0.5 * dist(nrm[0], mean(nrm))


def neumann_reference(emission, albedo, rho, F, bounces):
    """Plain-loop matrix-vector radiosity iteration (k x 3 vectors)."""
    k = emission.shape[0]
    light = [row[:] for row in emission.tolist()]
    base = emission.tolist()
    for _ in range(bounces):
        nxt = [[0.0, 0.0, 0.0] for _ in range(k)]
        for i in range(k):
            acc = [0.0, 0.0, 0.0]
            for j in range(k):
                f = float(F[i][j])
                if f == 0.0:
                    continue
                for c in range(3):
                    acc[c] += f * light[j][c]
            for c in range(3):
                nxt[i][c] = base[i][c] + rho * float(albedo[i][c]) * acc[c]
        light = nxt
    return np.array(light)
