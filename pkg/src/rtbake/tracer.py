"""Software ray tracing: BVH construction, occlusion and closest-hit queries.

This is the visibility core of the baker. Rays carry a [t_min, t_max]
interval in world units; occlusion queries between two surface points use the
asymmetric interval [eps, |b-a| - 2*eps] so neither endpoint's own surface is
hit, and terminate on the first confirmed intersection. The BVH uses median
splits along the longest node axis, which keeps construction deterministic
and the depth logarithmic in triangle count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .scene import Scene

# Relative scale for the default occlusion epsilon: eps = RAY_EPS_SCALE * scene diagonal.
RAY_EPS_SCALE = 1e-4
_DET_EPS = 1e-12
_STACK_SIZE = 128


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit
    t_min: float = 0.0
    t_max: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        d = np.asarray(self.direction, dtype=np.float64)
        n = float(np.linalg.norm(d))
        if n == 0.0:
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "direction", d / n)
        if not (0.0 <= self.t_min < self.t_max):
            raise ValueError(f"invalid ray interval [{self.t_min}, {self.t_max}]")


@dataclass(frozen=True)
class Hit:
    t: float
    u: float
    v: float
    triangle_index: int

    def point(self, ray: Ray) -> np.ndarray:
        return ray.origin + self.t * ray.direction


@dataclass
class Bvh:
    """Flat binary BVH. Leaves reference ranges of the permuted triangle list."""

    node_min: np.ndarray    # (N, 3)
    node_max: np.ndarray    # (N, 3)
    node_left: np.ndarray   # (N,) int32, -1 on leaves
    node_right: np.ndarray  # (N,) int32
    node_start: np.ndarray  # (N,) int32 into the permuted triangle arrays
    node_count: np.ndarray  # (N,) int32, 0 on inner nodes
    tri_v0: np.ndarray      # (T, 3) permuted
    tri_e1: np.ndarray      # (T, 3) v2 - v1
    tri_e2: np.ndarray      # (T, 3) v3 - v1
    tri_index: np.ndarray   # (T,) int32, permuted slot -> original triangle id
    max_leaf_size: int
    depth: int

    @property
    def num_nodes(self) -> int:
        return self.node_min.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.tri_v0.shape[0]

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.node_max[0] - self.node_min[0]))

    def default_epsilon(self) -> float:
        return RAY_EPS_SCALE * self.diagonal

    def arrays(self):
        return (
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_start, self.node_count,
            self.tri_v0, self.tri_e1, self.tri_e2, self.tri_index,
        )


def build_bvh(scene: Scene, max_leaf_size: int = 4) -> Bvh:
    """Deterministic median-split BVH over the scene triangles."""
    if max_leaf_size < 1:
        raise ValueError("max_leaf_size must be >= 1")
    pos = scene.positions
    tri_min = pos.min(axis=1)
    tri_max = pos.max(axis=1)
    centroid = pos.mean(axis=1)
    order = np.arange(scene.num_triangles, dtype=np.int64)

    n_min, n_max, n_left, n_right, n_start, n_count = [], [], [], [], [], []

    def new_node(lo, hi):
        n_min.append(lo)
        n_max.append(hi)
        n_left.append(-1)
        n_right.append(-1)
        n_start.append(0)
        n_count.append(0)
        return len(n_min) - 1

    max_depth = 0

    def build(start: int, end: int, depth: int) -> int:
        nonlocal max_depth
        max_depth = max(max_depth, depth)
        idx = order[start:end]
        lo = tri_min[idx].min(axis=0)
        hi = tri_max[idx].max(axis=0)
        node = new_node(lo, hi)
        count = end - start
        if count <= max_leaf_size:
            n_start[node] = start
            n_count[node] = count
            return node
        axis = int(np.argmax(hi - lo))
        mid = count // 2
        part = np.argpartition(centroid[idx, axis], mid, kind="introselect")
        order[start:end] = idx[part]
        n_left[node] = build(start, start + mid, depth + 1)
        n_right[node] = build(start + mid, end, depth + 1)
        return node

    build(0, scene.num_triangles, 1)

    v0 = pos[order, 0, :]
    return Bvh(
        node_min=np.ascontiguousarray(n_min, dtype=np.float64),
        node_max=np.ascontiguousarray(n_max, dtype=np.float64),
        node_left=np.array(n_left, dtype=np.int32),
        node_right=np.array(n_right, dtype=np.int32),
        node_start=np.array(n_start, dtype=np.int32),
        node_count=np.array(n_count, dtype=np.int32),
        tri_v0=np.ascontiguousarray(v0),
        tri_e1=np.ascontiguousarray(pos[order, 1, :] - v0),
        tri_e2=np.ascontiguousarray(pos[order, 2, :] - v0),
        tri_index=order.astype(np.int32),
        max_leaf_size=max_leaf_size,
        depth=max_depth,
    )


@njit(cache=True, inline="always")
def _mt_intersect(ox, oy, oz, dx, dy, dz, v0, e1, e2, t_min, t_max):
    """Moller-Trumbore; returns (t, u, v), t = -1 on miss."""
    px = dy * e2[2] - dz * e2[1]
    py = dz * e2[0] - dx * e2[2]
    pz = dx * e2[1] - dy * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if -_DET_EPS < det < _DET_EPS:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    tx = ox - v0[0]
    ty = oy - v0[1]
    tz = oz - v0[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0, 0.0, 0.0
    qx = ty * e1[2] - tz * e1[1]
    qy = tz * e1[0] - tx * e1[2]
    qz = tx * e1[1] - ty * e1[0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0, 0.0, 0.0
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if t < t_min or t > t_max:
        return -1.0, 0.0, 0.0
    return t, u, v


@njit(cache=True, inline="always")
def _aabb_hit(ox, oy, oz, dx, dy, dz, lo, hi, t_min, t_max):
    tn = t_min
    tf = t_max
    for k in range(3):
        if k == 0:
            o, d, l, h = ox, dx, lo[0], hi[0]
        elif k == 1:
            o, d, l, h = oy, dy, lo[1], hi[1]
        else:
            o, d, l, h = oz, dz, lo[2], hi[2]
        if d != 0.0:
            inv = 1.0 / d
            t1 = (l - o) * inv
            t2 = (h - o) * inv
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tn:
                tn = t1
            if t2 < tf:
                tf = t2
            if tn > tf:
                return False
        elif o < l or o > h:
            return False
    return True


@njit(cache=True)
def _occluded_ray(node_min, node_max, node_left, node_right, node_start, node_count,
                  tri_v0, tri_e1, tri_e2, tri_index,
                  ox, oy, oz, dx, dy, dz, t_min, t_max):
    """True if any triangle intersects within [t_min, t_max] (first-hit exit)."""
    stack = np.empty(_STACK_SIZE, dtype=np.int32)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _aabb_hit(ox, oy, oz, dx, dy, dz,
                         node_min[node], node_max[node], t_min, t_max):
            continue
        if node_count[node] > 0:
            start = node_start[node]
            for s in range(start, start + node_count[node]):
                t, _, _ = _mt_intersect(ox, oy, oz, dx, dy, dz,
                                        tri_v0[s], tri_e1[s], tri_e2[s], t_min, t_max)
                if t >= 0.0:
                    return True
        else:
            stack[top] = node_left[node]
            stack[top + 1] = node_right[node]
            top += 2
    return False


@njit(cache=True)
def _closest_ray(node_min, node_max, node_left, node_right, node_start, node_count,
                 tri_v0, tri_e1, tri_e2, tri_index,
                 ox, oy, oz, dx, dy, dz, t_min, t_max):
    """Minimal-t hit as (original triangle id, t, u, v); id is -1 on miss."""
    stack = np.empty(_STACK_SIZE, dtype=np.int32)
    stack[0] = 0
    top = 1
    best = -1
    bt = t_max
    bu = 0.0
    bv = 0.0
    while top > 0:
        top -= 1
        node = stack[top]
        if not _aabb_hit(ox, oy, oz, dx, dy, dz,
                         node_min[node], node_max[node], t_min, bt):
            continue
        if node_count[node] > 0:
            start = node_start[node]
            for s in range(start, start + node_count[node]):
                t, u, v = _mt_intersect(ox, oy, oz, dx, dy, dz,
                                        tri_v0[s], tri_e1[s], tri_e2[s], t_min, bt)
                if t >= 0.0:
                    best = tri_index[s]
                    bt = t
                    bu = u
                    bv = v
        else:
            stack[top] = node_left[node]
            stack[top + 1] = node_right[node]
            top += 2
    return best, bt, bu, bv


@njit(cache=True, parallel=True)
def _occluded_batch(node_min, node_max, node_left, node_right, node_start, node_count,
                    tri_v0, tri_e1, tri_e2, tri_index, a, b, eps, out):
    for q in prange(a.shape[0]):
        dx = b[q, 0] - a[q, 0]
        dy = b[q, 1] - a[q, 1]
        dz = b[q, 2] - a[q, 2]
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dist <= 2.0 * eps:
            out[q] = False  # degenerate pair: mutually visible by convention
            continue
        inv = 1.0 / dist
        out[q] = _occluded_ray(
            node_min, node_max, node_left, node_right, node_start, node_count,
            tri_v0, tri_e1, tri_e2, tri_index,
            a[q, 0], a[q, 1], a[q, 2], dx * inv, dy * inv, dz * inv,
            eps, dist - 2.0 * eps)


@njit(cache=True, parallel=True)
def _closest_batch(node_min, node_max, node_left, node_right, node_start, node_count,
                   tri_v0, tri_e1, tri_e2, tri_index,
                   origins, dirs, t_min, t_max, out_tri, out_t, out_u, out_v):
    for q in prange(origins.shape[0]):
        tri, t, u, v = _closest_ray(
            node_min, node_max, node_left, node_right, node_start, node_count,
            tri_v0, tri_e1, tri_e2, tri_index,
            origins[q, 0], origins[q, 1], origins[q, 2],
            dirs[q, 0], dirs[q, 1], dirs[q, 2], t_min, t_max)
        out_tri[q] = tri
        out_t[q] = t
        out_u[q] = u
        out_v[q] = v


def intersect_triangle(ray: Ray, triangle) -> Hit | None:
    """Single ray/triangle intersection; barycentrics of the hit or None."""
    v0 = np.asarray(triangle.v1.position, dtype=np.float64)
    e1 = np.asarray(triangle.v2.position, dtype=np.float64) - v0
    e2 = np.asarray(triangle.v3.position, dtype=np.float64) - v0
    o, d = ray.origin, ray.direction
    t, u, v = _mt_intersect(o[0], o[1], o[2], d[0], d[1], d[2],
                            v0, e1, e2, ray.t_min, ray.t_max)
    if t < 0.0:
        return None
    return Hit(t=float(t), u=float(u), v=float(v), triangle_index=-1)


def occluded(bvh: Bvh, a, b, epsilon: float) -> bool:
    """True iff geometry blocks the segment a->b on [eps, |b-a| - 2*eps]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = b - a
    dist = float(np.linalg.norm(d))
    if dist <= 2.0 * epsilon:
        return False
    d /= dist
    return bool(_occluded_ray(
        *bvh.arrays(),
        a[0], a[1], a[2], d[0], d[1], d[2], epsilon, dist - 2.0 * epsilon))


def closest_hit(bvh: Bvh, ray: Ray) -> Hit | None:
    tri, t, u, v = _closest_ray(
        *bvh.arrays(),
        ray.origin[0], ray.origin[1], ray.origin[2],
        ray.direction[0], ray.direction[1], ray.direction[2],
        ray.t_min, ray.t_max)
    if tri < 0:
        return None
    return Hit(t=float(t), u=float(u), v=float(v), triangle_index=int(tri))


def occluded_batch(bvh: Bvh, a: np.ndarray, b: np.ndarray, epsilon: float) -> np.ndarray:
    """Vector form of occluded() over row-matched point pairs."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty(a.shape[0], dtype=np.bool_)
    _occluded_batch(*bvh.arrays(), a, b, epsilon, out)
    return out


def closest_hit_batch(bvh: Bvh, origins: np.ndarray, dirs: np.ndarray,
                      t_min: float, t_max: float):
    """Vector closest-hit: returns (triangle id or -1, t, u, v) arrays."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    q = origins.shape[0]
    out_tri = np.empty(q, dtype=np.int32)
    out_t = np.empty(q, dtype=np.float64)
    out_u = np.empty(q, dtype=np.float64)
    out_v = np.empty(q, dtype=np.float64)
    _closest_batch(*bvh.arrays(), origins, dirs, t_min, t_max,
                   out_tri, out_t, out_u, out_v)
    return out_tri, out_t, out_u, out_v
