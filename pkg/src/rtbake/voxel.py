"""Binary scene voxelization and occlusion by grid raymarching.

A lightweight, triangle-count-independent fallback for the ray-traced
visibility core. Triangles are swizzled so their normal's dominant component
aligns with z, rasterized over the swizzled x/y grid, and each covered cell
is set at the fragment's pre-swizzle position. Queries march the grid and
report occlusion when any interior sample lands in a solid cell; accuracy is
bounded by the grid resolution, not exact.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit, prange

from .scene import Scene

VOXEL_MAGIC = b"RVOX"
DEFAULT_STEP_SCALE = 0.5

# vertex swizzles per dominant normal axis, applied as g[:, perm]
_PERMS = ((2, 1, 0), (0, 2, 1), (0, 1, 2))


@dataclass
class VoxelMap:
    resolution: int
    bits: np.ndarray      # (r, r, r) uint8, indexed [x, y, z]
    origin: np.ndarray    # world position of grid corner (0,0,0)
    scale: np.ndarray     # grid units per world unit, per axis

    def world_to_grid(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p, dtype=np.float64) - self.origin) * self.scale

    def occupied_count(self) -> int:
        return int(self.bits.sum())


def voxelize(scene: Scene, resolution: int) -> VoxelMap:
    """Rasterize the scene into an r^3 occupancy grid over its bounds."""
    if not (2 <= resolution <= 512):
        raise ValueError(f"voxel resolution {resolution} outside [2, 512]")
    r = resolution
    lo, hi = scene.bounds
    extent = hi - lo
    extent = np.where(extent <= 0.0, 1.0, extent)  # flat scenes still get a grid
    scale = r / extent
    bits = np.zeros((r, r, r), dtype=np.uint8)

    grid_pos = (scene.positions - lo) * scale  # (T, 3, 3) grid-space vertices
    e1 = scene.positions[:, 1] - scene.positions[:, 0]
    e2 = scene.positions[:, 2] - scene.positions[:, 0]
    face_n = np.abs(np.cross(e1, e2))
    dominant = np.argmax(face_n, axis=1)

    for t in range(scene.num_triangles):
        g = grid_pos[t]
        s = g[:, _PERMS[dominant[t]]]
        _raster_triangle(bits, g, s, r)
    return VoxelMap(resolution=r, bits=bits, origin=lo.copy(), scale=scale)


def _raster_triangle(bits: np.ndarray, g: np.ndarray, s: np.ndarray, r: int) -> None:
    a, b, c = s[0, :2], s[1, :2], s[2, :2]
    area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    wrote = False
    if area2 != 0.0:
        if area2 < 0.0:
            b, c = c, b
            area2 = -area2
            corner = (0, 2, 1)
        else:
            corner = (0, 1, 2)
        x0 = max(0, int(math.floor(min(a[0], b[0], c[0]) - 0.5)))
        x1 = min(r - 1, int(math.ceil(max(a[0], b[0], c[0]) - 0.5)))
        y0 = max(0, int(math.floor(min(a[1], b[1], c[1]) - 0.5)))
        y1 = min(r - 1, int(math.ceil(max(a[1], b[1], c[1]) - 0.5)))
        if x1 >= x0 and y1 >= y0:
            cx = np.arange(x0, x1 + 1) + 0.5
            cy = np.arange(y0, y1 + 1) + 0.5
            px, py = np.meshgrid(cx, cy)
            ws = []
            inside = np.ones(px.shape, dtype=bool)
            for p, q in ((a, b), (b, c), (c, a)):
                w = (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0])
                inside &= w >= 0.0  # inclusive: shared edges may double-set cells
                ws.append(w)
            if inside.any():
                iy, ix = np.nonzero(inside)
                bary = np.stack([ws[1][iy, ix], ws[2][iy, ix], ws[0][iy, ix]], axis=1) / area2
                cell = np.einsum("nk,kj->nj", bary, g[corner, :])
                cell = np.clip(np.floor(cell).astype(np.int64), 0, r - 1)
                bits[cell[:, 0], cell[:, 1], cell[:, 2]] = 1
                wrote = True
    if not wrote:
        # triangle smaller than a cell: mark its centroid's cell
        cell = np.clip(np.floor(g.mean(axis=0)).astype(np.int64), 0, r - 1)
        bits[cell[0], cell[1], cell[2]] = 1


@njit(cache=True)
def _march(bits, r, ax, ay, az, bx, by, bz, step):
    """Symmetric march from the segment midpoint outward, in grid units.

    Samples within one cell of either endpoint are excluded so the query is
    not self-occluded by the surfaces it connects.
    """
    dx = bx - ax
    dy = by - ay
    dz = bz - az
    length = math.sqrt(dx * dx + dy * dy + dz * dz)
    if length == 0.0:
        return False
    half = 0.5 * length
    usable = half - 1.0
    if usable < 0.0:
        return False
    ux = dx / length
    uy = dy / length
    uz = dz / length
    mx = 0.5 * (ax + bx)
    my = 0.5 * (ay + by)
    mz = 0.5 * (az + bz)
    k = 0
    while True:
        off = k * step
        if off > usable:
            return False
        for sgn in range(2):
            if k == 0 and sgn == 1:
                continue
            f = off if sgn == 0 else -off
            px = mx + f * ux
            py = my + f * uy
            pz = mz + f * uz
            ix = int(math.floor(px))
            iy = int(math.floor(py))
            iz = int(math.floor(pz))
            if 0 <= ix < r and 0 <= iy < r and 0 <= iz < r:
                if bits[ix, iy, iz] != 0:
                    return True
        k += 1


@njit(cache=True, parallel=True)
def _march_batch(bits, r, a, b, step, out):
    for q in prange(a.shape[0]):
        out[q] = _march(bits, r, a[q, 0], a[q, 1], a[q, 2],
                        b[q, 0], b[q, 1], b[q, 2], step)


def raymarch_occluded(vm: VoxelMap, a, b, step_scale: float = DEFAULT_STEP_SCALE) -> bool:
    """Approximate occlusion between two world points via the voxel grid."""
    if not (0.0 < step_scale <= 1.0):
        raise ValueError("step_scale must lie in (0, 1]")
    ga = vm.world_to_grid(a)
    gb = vm.world_to_grid(b)
    return bool(_march(vm.bits, vm.resolution,
                       ga[0], ga[1], ga[2], gb[0], gb[1], gb[2], step_scale))


def raymarch_occluded_batch(vm: VoxelMap, a: np.ndarray, b: np.ndarray,
                            step_scale: float = DEFAULT_STEP_SCALE) -> np.ndarray:
    if not (0.0 < step_scale <= 1.0):
        raise ValueError("step_scale must lie in (0, 1]")
    ga = np.ascontiguousarray((np.asarray(a, dtype=np.float64) - vm.origin) * vm.scale)
    gb = np.ascontiguousarray((np.asarray(b, dtype=np.float64) - vm.origin) * vm.scale)
    out = np.empty(ga.shape[0], dtype=np.bool_)
    _march_batch(vm.bits, vm.resolution, ga, gb, step_scale, out)
    return out


def surface_pair_occluded(vm: VoxelMap, a, normal_a, b, normal_b,
                          step_scale: float = DEFAULT_STEP_SCALE) -> np.ndarray:
    """Occlusion between two surface points, endpoints pushed off their cells.

    Points on geometry sit inside solid cells, and oblique segments hug that
    surface layer well past the plain endpoint exclusion; stepping one cell
    along each surface normal before marching removes the self-occlusion
    (same role the ray epsilon plays for traced visibility). This is the
    query the solver's voxel visibility uses. Accepts single points or
    row-matched batches.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    na = np.atleast_2d(np.asarray(normal_a, dtype=np.float64))
    nb = np.atleast_2d(np.asarray(normal_b, dtype=np.float64))
    # one cell along the normal: world offset n * cell_size == grid offset n
    ga = (a - vm.origin) * vm.scale + na
    gb = (b - vm.origin) * vm.scale + nb
    out = np.empty(ga.shape[0], dtype=np.bool_)
    _march_batch(vm.bits, vm.resolution, np.ascontiguousarray(ga),
                 np.ascontiguousarray(gb), step_scale, out)
    return out


def save_voxelmap(vm: VoxelMap, path) -> None:
    """RVOX dump: magic, u32 LE resolution, ceil(r^3/8) bytes x-fastest."""
    packed = np.packbits(vm.bits.transpose(2, 1, 0).ravel(), bitorder="little")
    with open(path, "wb") as f:
        f.write(VOXEL_MAGIC)
        f.write(struct.pack("<I", vm.resolution))
        f.write(packed.tobytes())


def load_voxelmap(path, origin=None, scale=None) -> VoxelMap:
    data = Path(path).read_bytes()
    if data[:4] != VOXEL_MAGIC:
        raise ValueError(f"{path}: not a voxel map (bad magic)")
    (r,) = struct.unpack("<I", data[4:8])
    need = (r ** 3 + 7) // 8
    payload = np.frombuffer(data[8:], dtype=np.uint8)
    if payload.size < need:
        raise ValueError(f"{path}: truncated voxel payload")
    flat = np.unpackbits(payload, bitorder="little")[: r ** 3]
    bits = flat.reshape(r, r, r).transpose(2, 1, 0).astype(np.uint8)
    return VoxelMap(
        resolution=r,
        bits=np.ascontiguousarray(bits),
        origin=np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64),
        scale=np.ones(3) if scale is None else np.asarray(scale, dtype=np.float64),
    )
