"""UV-space rasterization of scenes into texture groups.

The texture group is the solver's entire state: a set of co-registered
UV-space maps (world position, normal, albedo, patch area, emission and the
two lighting ping-pong buffers). A texel becomes a radiosity patch when its
center is covered by some triangle's UV footprint; everything else is a
non-patch with ``pos`` alpha 0.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .scene import Scene


class OverlapError(Exception):
    """Two triangles claimed the same texel during rasterization."""


@dataclass(frozen=True)
class PatchId:
    x: int
    y: int
    linear: int

    @classmethod
    def from_xy(cls, x: int, y: int, width: int) -> "PatchId":
        return cls(x, y, x + y * width)

    @classmethod
    def from_linear(cls, linear: int, width: int) -> "PatchId":
        return cls(linear % width, linear // width, linear)


@dataclass
class TextureGroup:
    width: int
    height: int
    pos: np.ndarray       # (h, w, 4) xyz world position, alpha = occupancy
    nrm: np.ndarray       # (h, w, 3) unit normals on occupied texels
    mat: np.ndarray       # (h, w, 3) albedo
    arf: np.ndarray       # (h, w) patch world area
    emission: np.ndarray  # (h, w, 3)
    lig_in: np.ndarray    # (h, w, 4) radiosity RGB + substructuring alpha
    lig_out: np.ndarray   # (h, w, 4)

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def occupancy(self) -> np.ndarray:
        return self.pos[:, :, 3] > 0.0

    def occupied_linear(self) -> np.ndarray:
        """Linear indices (x + y*width) of occupied texels, ascending."""
        ys, xs = np.nonzero(self.occupancy)
        return np.sort(xs + ys * self.width).astype(np.int64)

    def patch(self, x: int, y: int) -> PatchId:
        return PatchId.from_xy(x, y, self.width)

    def maps(self) -> dict[str, np.ndarray]:
        return {
            "pos": self.pos, "nrm": self.nrm, "mat": self.mat, "arf": self.arf,
            "emission": self.emission, "lig_in": self.lig_in, "lig_out": self.lig_out,
        }


def _empty_group(width: int, height: int) -> TextureGroup:
    return TextureGroup(
        width=width, height=height,
        pos=np.zeros((height, width, 4)),
        nrm=np.zeros((height, width, 3)),
        mat=np.zeros((height, width, 3)),
        arf=np.zeros((height, width)),
        emission=np.zeros((height, width, 3)),
        lig_in=np.zeros((height, width, 4)),
        lig_out=np.zeros((height, width, 4)),
    )


def patch_area(triangle, resolution) -> float:
    """World-space area represented by one texel of the given triangle.

    The triangle's world area is spread uniformly over the texels it occupies,
    estimated as uv_area * total texel count. Zero-UV-area triangles return 0
    and rasterize no patches.
    """
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    n = resolution[0] * resolution[1]
    a_uv = triangle.uv_area
    if a_uv <= 0.0:
        return 0.0
    return triangle.world_area / (a_uv * n)


def _covered_texels(uv: np.ndarray, width: int, height: int):
    """Texels whose center the UV triangle covers, with barycentric weights.

    Center-sample rule with a top-left tie-break on shared edges, so two
    triangles meeting along a UV edge partition the boundary texels instead
    of both claiming them. Returns (xs, ys, bary) with bary rows summing to 1.
    """
    a, b, c = uv[0], uv[1], uv[2]
    area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if area2 == 0.0:
        return None
    flipped = area2 < 0.0
    if flipped:  # normalize to counter-clockwise
        b, c = c, b
        area2 = -area2

    lo = np.minimum(np.minimum(a, b), c)
    hi = np.maximum(np.maximum(a, b), c)
    x0 = max(0, int(np.floor(lo[0] * width - 0.5)))
    x1 = min(width - 1, int(np.ceil(hi[0] * width - 0.5)))
    y0 = max(0, int(np.floor(lo[1] * height - 0.5)))
    y1 = min(height - 1, int(np.ceil(hi[1] * height - 0.5)))
    if x1 < x0 or y1 < y0:
        return None

    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    u = (xs + 0.5) / width
    v = (ys + 0.5) / height
    uu, vv = np.meshgrid(u, v)

    inside = np.ones(uu.shape, dtype=bool)
    weights = []
    for p, q in ((a, b), (b, c), (c, a)):
        w = (q[0] - p[0]) * (vv - p[1]) - (q[1] - p[1]) * (uu - p[0])
        dx, dy = q[0] - p[0], q[1] - p[1]
        top_left = dy < 0.0 or (dy == 0.0 and dx < 0.0)
        inside &= (w > 0.0) | ((w == 0.0) & top_left)
        weights.append(w)
    if not inside.any():
        return None

    iy, ix = np.nonzero(inside)
    # edge function opposite each vertex / twice the area = barycentric weight
    bary = np.stack(
        [weights[1][iy, ix], weights[2][iy, ix], weights[0][iy, ix]], axis=1
    ) / area2
    return xs[ix], ys[iy], bary, flipped


def rasterize_owners(scene: Scene, resolution, collect_overlaps: bool = False):
    """Rasterize all triangles, returning the per-texel owner map.

    owners[y, x] is the claiming triangle index or -1. With
    ``collect_overlaps`` every double claim is recorded instead of raising.
    """
    width, height = resolution
    owners = np.full((height, width), -1, dtype=np.int64)
    overlaps = []
    for t in range(scene.num_triangles):
        hit = _covered_texels(scene.uvs[t], width, height)
        if hit is None:
            continue
        xs, ys, _, _ = hit
        prev = owners[ys, xs]
        taken = prev >= 0
        if taken.any():
            for x, y, p in zip(xs[taken], ys[taken], prev[taken]):
                overlaps.append((int(x), int(y), int(p), t))
            if not collect_overlaps:
                x, y, p = int(xs[taken][0]), int(ys[taken][0]), int(prev[taken][0])
                raise OverlapError(
                    f"texel ({x},{y}) claimed by triangles {p} and {t}; "
                    "fix the UV layout or lower the resolution"
                )
        owners[ys, xs] = t
    return owners, overlaps


def build_texture_group(scene: Scene, resolution) -> TextureGroup:
    """Rasterize the scene into a fresh texture group (the solver's input).

    Every occupied texel carries barycentrically interpolated position and
    normal, its material's albedo and emission, and the triangle's per-patch
    area. Both lighting buffers start at the emission values.
    """
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    width, height = resolution
    tg = _empty_group(width, height)
    albedo = scene.albedo_array()
    emission = scene.emission_array()
    owners = np.full((height, width), -1, dtype=np.int64)

    for t in range(scene.num_triangles):
        hit = _covered_texels(scene.uvs[t], width, height)
        if hit is None:
            continue
        xs, ys, bary, flipped = hit
        prev = owners[ys, xs]
        if (prev >= 0).any():
            k = int(np.argmax(prev >= 0))
            raise OverlapError(
                f"texel ({int(xs[k])},{int(ys[k])}) claimed by triangles "
                f"{int(prev[k])} and {t}; fix the UV layout or lower the resolution"
            )
        owners[ys, xs] = t

        corner = (0, 2, 1) if flipped else (0, 1, 2)
        p = np.einsum("nk,kj->nj", bary, scene.positions[t, corner, :])
        n = np.einsum("nk,kj->nj", bary, scene.normals[t, corner, :])
        n /= np.linalg.norm(n, axis=1)[:, None]

        area = patch_area(scene.triangle(t), resolution)
        mi = int(scene.material_index[t])
        tg.pos[ys, xs, :3] = p
        tg.pos[ys, xs, 3] = 1.0
        tg.nrm[ys, xs] = n
        tg.mat[ys, xs] = albedo[mi]
        tg.emission[ys, xs] = emission[mi]
        tg.arf[ys, xs] = area

    occ = tg.occupancy
    tg.lig_in[:, :, :3] = tg.emission
    tg.lig_in[:, :, 3] = occ
    tg.lig_out[:, :, :3] = tg.emission
    tg.lig_out[:, :, 3] = occ
    return tg


# 8-connected neighbourhood in row-major order (dy, dx), used for seam repair.
NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)


def sew_seams(tg: TextureGroup) -> TextureGroup:
    """Copy lighting onto non-patches that border a patch (seam repair).

    Each unoccupied texel with at least one occupied 8-neighbour assumes that
    neighbour's lig_out RGB, first match in row-major neighbour order winning.
    Occupancy flags and occupied texels are untouched; the result is a new
    texture group sharing every map except lig_out.
    """
    occ = tg.occupancy
    out = tg.lig_out.copy()
    filled = occ.copy()
    h, w = occ.shape
    for dy, dx in NEIGHBOR_OFFSETS:
        src_occ = np.zeros_like(occ)
        src_rgb = np.zeros((h, w, 3))
        ys0, ys1 = max(0, -dy), min(h, h - dy)
        xs0, xs1 = max(0, -dx), min(w, w - dx)
        src_occ[ys0:ys1, xs0:xs1] = occ[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
        src_rgb[ys0:ys1, xs0:xs1] = tg.lig_out[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx, :3]
        take = ~filled & src_occ
        out[take, :3] = src_rgb[take]
        filled |= take
    return dataclasses.replace(tg, lig_out=out)
