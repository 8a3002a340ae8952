"""Progressive-refinement radiosity over texture groups.

Each pass gathers, for every occupied patch, the weighted lighting
contribution of a selected set of contributor patches:

    lig_out(i) = emission(i) + sum_j w_j * lig_in(j) * mat(i) * rho * F(i,j) * V(i,j)

with the single-sample view factor F(i,j) = arf(j) * cos_i * cos_j / (pi r^2).
Contributor selection is pluggable (full pairing, static stride, Monte-Carlo
or mipmapped window undersampling, alpha-embedded quad-tree), as is the
visibility backend (BVH rays, voxel raymarching, a deterministic hybrid mix,
or a bit cache addressed by a mirrored Cantor pairing). Every worker writes
only its own output patch, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numba import njit, prange

from .metrics_io import PassReport
from .tracer import Bvh, _closest_ray, _occluded_ray
from .uvraster import NEIGHBOR_OFFSETS, PatchId, TextureGroup
from .voxel import DEFAULT_STEP_SCALE, VoxelMap, _march

DEFAULT_RHO = 0.9
DEFAULT_CLAMP = 0.05
DEFAULT_BATCH_RAY_LIMIT = 128 ** 4
CACHE_MAX_BYTES = 2 ** 32
VALID_WINDOWS = (1, 4, 16, 64, 256)
VALID_MAX_NODES = (2, 4, 8, 16)
MODES = ("full", "stride", "monte_carlo", "mipmapped", "subdiv", "directional")
VISIBILITIES = ("traced", "voxel", "hybrid", "cached")
WINDOW_MODES = ("stride", "monte_carlo", "mipmapped")

_U64 = (1 << 64) - 1


class ConfigError(Exception):
    """Inconsistent or out-of-range solver configuration."""


@dataclass
class SolverConfig:
    mode: str = "full"
    window_m: int = 1                 # patches per sample, perfect square
    gradient_threshold: float = 0.05
    max_node: int = 16
    reflectivity_factor: float = DEFAULT_RHO
    contribution_clamp: float | None = DEFAULT_CLAMP  # None disables clamping
    form_factor_clamp: float = 1.0
    distance_factor: float = 1.0
    epsilon: float | None = None      # None: 1e-4 x scene diagonal
    batch_ray_limit: int = DEFAULT_BATCH_RAY_LIMIT
    visibility: str = "traced"
    hybrid_ratio: float = 0.5         # fraction of traces replaced by raymarches
    voxel_resolution: int = 64
    step_scale: float = DEFAULT_STEP_SCALE
    passes: int = 2
    seed: int = 0
    blur_level: int = 0               # directional: mip level sampled on hits
    apply_cosine: bool = True         # directional: keep the geometric dot product
    workers: int | None = None

    def validate(self, resolution=None) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.visibility not in VISIBILITIES:
            raise ConfigError(f"unknown visibility {self.visibility!r}")
        if self.mode in WINDOW_MODES:
            if self.window_m not in VALID_WINDOWS:
                raise ConfigError(f"window_m {self.window_m} not in {VALID_WINDOWS}")
        elif self.window_m != 1:
            raise ConfigError(f"window_m is only meaningful for {WINDOW_MODES}")
        if self.mode == "subdiv" and self.max_node not in VALID_MAX_NODES:
            raise ConfigError(f"max_node {self.max_node} not in {VALID_MAX_NODES}")
        if self.contribution_clamp is not None and self.contribution_clamp <= 0.0:
            raise ConfigError("contribution_clamp must be positive (or None)")
        if not (0.0 <= self.hybrid_ratio <= 1.0):
            raise ConfigError("hybrid_ratio must lie in [0, 1]")
        if self.passes < 0:
            raise ConfigError("passes must be >= 0")
        if resolution is not None:
            w, h = resolution
            if self.batch_ray_limit < w * h:
                raise ConfigError("batch_ray_limit must cover at least one texel row sweep")
            side = int(math.isqrt(self.window_m))
            if self.mode == "mipmapped" and (w % side or h % side):
                raise ConfigError("mipmapped mode needs resolution divisible by the window side")
            if self.mode == "directional" and self.blur_level > 0:
                if w % (1 << self.blur_level) or h % (1 << self.blur_level):
                    raise ConfigError("blur_level exceeds the map's mip chain")

    def clamp_value(self) -> float:
        return math.inf if self.contribution_clamp is None else self.contribution_clamp

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["contribution_clamp"] = self.contribution_clamp
        return d


# --------------------------------------------------------------------------
# pairing function and visibility cache

def cantor(x: int, y: int) -> int:
    """x + (x+y)(x+y+1)/2, exact; rejects results beyond 2^64 - 1."""
    if x < 0 or y < 0:
        raise ValueError("cantor pairing requires non-negative integers")
    r = x + (x + y) * (x + y + 1) // 2
    if r > _U64:
        raise OverflowError(f"cantor({x}, {y}) exceeds 64 bits")
    return r


def pair_address(a, b, n: int) -> int:
    """Bit address of the unordered patch pair {a, b} among n patches.

    Mirrors the larger index before pairing, address = cantor(n-1-max, min),
    which packs all n(n-1)/2 unordered non-self pairs injectively into
    [0, n-2 + (n-2)(n-1)/2]; a 2^32-byte buffer therefore covers every pair
    of a 512x512 lightmap.
    """
    ai = a.linear if isinstance(a, PatchId) else int(a)
    bi = b.linear if isinstance(b, PatchId) else int(b)
    if ai == bi:
        raise ValueError("self-pairs have no cache address")
    lo, hi = (ai, bi) if ai < bi else (bi, ai)
    if lo < 0 or hi >= n:
        raise ValueError(f"pair ({ai}, {bi}) outside [0, {n})")
    return cantor(n - 1 - hi, lo)


def pair_capacity_bits(n: int) -> int:
    """Smallest bit count addressing every unordered non-self pair below n."""
    if n < 2:
        return 0
    return (n - 2) + (n - 2) * (n - 1) // 2 + 1


@dataclass
class VisCache:
    """Bit buffer of pairwise visibility (1 = mutually visible).

    Populated on the first pass that uses it; all later passes read bits
    instead of tracing. Word-granular writes are kept single-writer.
    """

    n: int
    words: np.ndarray
    populated: bool = False
    trace_count: int = 0
    hit_count: int = 0

    @property
    def capacity_bits(self) -> int:
        return self.words.shape[0] * 64

    @classmethod
    def try_create(cls, n: int) -> "VisCache | None":
        bits = pair_capacity_bits(n)
        if bits > 8 * CACHE_MAX_BYTES:
            return None
        return cls(n=n, words=np.zeros((bits + 63) // 64, dtype=np.uint64))

    def get(self, addr: int) -> bool:
        return bool((int(self.words[addr >> 6]) >> (addr & 63)) & 1)

    def set(self, addr: int, visible: bool) -> None:
        if visible:
            self.words[addr >> 6] |= np.uint64(1 << (addr & 63))


def cached_visibility(cache: VisCache, bvh: Bvh, a, b, tg: TextureGroup,
                      first_pass: bool, epsilon: float | None = None) -> bool:
    """Visibility of patch pair (a, b) through the cache.

    First pass traces, stores the bit and returns it; later passes read the
    stored bit. Addresses beyond the cache capacity always trace.
    """
    from .tracer import occluded

    eps = bvh.default_epsilon() if epsilon is None else epsilon
    pa = tg.pos[a.y, a.x, :3]
    pb = tg.pos[b.y, b.x, :3]
    addr = pair_address(a, b, cache.n)
    if addr >= cache.capacity_bits:
        cache.trace_count += 1
        return not occluded(bvh, pa, pb, eps)
    if first_pass:
        visible = not occluded(bvh, pa, pb, eps)
        cache.trace_count += 1
        cache.set(addr, visible)
        return visible
    cache.hit_count += 1
    return cache.get(addr)


# --------------------------------------------------------------------------
# view factor

@dataclass(frozen=True)
class FormFactorSample:
    F: float
    cos_i: float
    cos_j: float
    r: float


def form_factor(tg: TextureGroup, i: PatchId, j: PatchId,
                form_factor_clamp: float = 1.0,
                distance_factor: float = 1.0) -> FormFactorSample:
    """Single-sample view factor between two occupied patches.

    F = arf(j) * max(cos_i, 0) * max(cos_j, 0) / (pi r^2), clamped to the
    configured maximum; coincident patches yield F = 0.
    """
    if not (tg.pos[i.y, i.x, 3] > 0 and tg.pos[j.y, j.x, 3] > 0):
        raise ValueError("form factors are defined between occupied patches")
    if i.linear == j.linear:
        raise ValueError("form factor of a patch with itself is undefined")
    d = tg.pos[j.y, j.x, :3] - tg.pos[i.y, i.x, :3]
    dist = float(np.linalg.norm(d))
    r = dist * distance_factor
    if r <= 0.0:
        return FormFactorSample(F=0.0, cos_i=0.0, cos_j=0.0, r=0.0)
    dn = d / dist
    cos_i = float(tg.nrm[i.y, i.x] @ dn)
    cos_j = float(tg.nrm[j.y, j.x] @ -dn)
    f = float(tg.arf[j.y, j.x]) * max(cos_i, 0.0) * max(cos_j, 0.0) / (math.pi * r * r)
    return FormFactorSample(F=min(f, form_factor_clamp), cos_i=cos_i, cos_j=cos_j, r=r)


# --------------------------------------------------------------------------
# lighting mip pyramid (occupancy-weighted)

def build_lig_mipmaps(tg: TextureGroup, levels: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pyramid of (rgb, occupancy-count) maps over lig_in.

    Level L+1 texels hold the occupancy-weighted mean of their four level-L
    children and the children's summed occupancy; empty children contribute
    nothing.
    """
    h, w = tg.lig_in.shape[:2]
    if levels > int(math.log2(min(w, h))):
        raise ValueError(f"{levels} levels exceed the {w}x{h} mip chain")
    rgb = tg.lig_in[:, :, :3].astype(np.float64)
    occ = tg.occupancy.astype(np.float64)
    pyramid = [(rgb, occ)]
    for _ in range(levels):
        if rgb.shape[0] % 2 or rgb.shape[1] % 2:
            raise ValueError("mip reduction needs even dimensions at every level")
        wsum = rgb * occ[:, :, None]
        wsum = wsum[0::2, 0::2] + wsum[0::2, 1::2] + wsum[1::2, 0::2] + wsum[1::2, 1::2]
        occ = occ[0::2, 0::2] + occ[0::2, 1::2] + occ[1::2, 0::2] + occ[1::2, 1::2]
        with np.errstate(invalid="ignore"):
            rgb = np.where(occ[:, :, None] > 0, wsum / np.maximum(occ, 1.0)[:, :, None], 0.0)
        pyramid.append((rgb, occ))
    return pyramid


# --------------------------------------------------------------------------
# alpha-embedded quad tree

def gradient(lig, nrm) -> float:
    """Refinement gradient of four children (index 0 = top-left carrier)."""
    lig = np.asarray(lig, dtype=np.float64).reshape(4, -1)
    nrm = np.asarray(nrm, dtype=np.float64).reshape(4, -1)
    return 0.5 * float(np.linalg.norm(lig[0] - lig.mean(axis=0))) \
        + 0.5 * float(np.linalg.norm(nrm[0] - nrm.mean(axis=0)))


def alpha_quadtree_step(alpha: np.ndarray, lig_rgb: np.ndarray, nrm: np.ndarray,
                        step: int, threshold: float) -> None:
    """One bottom-up substructuring level (in place).

    Merges every step x step block whose four child carriers each hold alpha
    (step/2)^2 and whose gradient is below the threshold, transferring all
    alpha to the top-left child.
    """
    half = step // 2
    need = float(half * half)

    def grid(m):
        return (m[0::step, 0::step], m[0::step, half::step],
                m[half::step, 0::step], m[half::step, half::step])

    a1, a2, a3, a4 = grid(alpha)
    bh = min(g.shape[0] for g in (a1, a2, a3, a4))
    bw = min(g.shape[1] for g in (a1, a2, a3, a4))
    a1, a2, a3, a4 = (g[:bh, :bw] for g in (a1, a2, a3, a4))
    l1, l2, l3, l4 = (g[:bh, :bw] for g in grid(lig_rgb))
    n1, n2, n3, n4 = (g[:bh, :bw] for g in grid(nrm))

    lm = (l1 + l2 + l3 + l4) / 4.0
    nm = (n1 + n2 + n3 + n4) / 4.0
    grad = 0.5 * np.linalg.norm(l1 - lm, axis=-1) + 0.5 * np.linalg.norm(n1 - nm, axis=-1)

    merge = (a1 == need) & (a2 == need) & (a3 == need) & (a4 == need) & (grad < threshold)
    a1[merge] = a1[merge] + a2[merge] + a3[merge] + a4[merge]
    a2[merge] = 0.0
    a3[merge] = 0.0
    a4[merge] = 0.0


def build_alpha_quadtree(tg: TextureGroup, threshold: float, max_node: int) -> TextureGroup:
    """(Re)build the sampling quad tree inside lig_in's alpha channel.

    Alpha starts at 1 on occupied texels and 0 elsewhere; each level then
    merges homogeneous blocks, so the alpha sum always equals the occupied
    patch count.
    """
    if max_node not in VALID_MAX_NODES:
        raise ConfigError(f"max_node {max_node} not in {VALID_MAX_NODES}")
    alpha = tg.lig_in[:, :, 3]
    alpha[:] = tg.occupancy.astype(np.float64)
    step = 2
    while step <= max_node:
        alpha_quadtree_step(alpha, tg.lig_in[:, :, :3], tg.nrm, step, threshold)
        step *= 2
    return tg


# --------------------------------------------------------------------------
# contributor selection

def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(_U64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def window_hash(seed: int, window_index, pass_index: int) -> np.ndarray:
    """Counter-based hash: deterministic in (window, pass), shooter-free."""
    w = np.asarray(window_index, dtype=np.uint64)
    h = _splitmix(np.uint64(seed & _U64) ^ _splitmix(w))
    return _splitmix(h ^ np.uint64(pass_index))


def _window_view(m: np.ndarray, side: int) -> np.ndarray:
    """Pad to window multiples and reshape to (windows_y, windows_x, side*side)."""
    h, w = m.shape[:2]
    ph = (-h) % side
    pw = (-w) % side
    if ph or pw:
        pad = [(0, ph), (0, pw)] + [(0, 0)] * (m.ndim - 2)
        m = np.pad(m, pad)
    hh, ww = m.shape[0] // side, m.shape[1] // side
    tail = m.shape[2:]
    return m.reshape(hh, side, ww, side, *tail).swapaxes(1, 2).reshape(hh, ww, side * side, *tail)


def select_pass_table(tg: TextureGroup, cfg: SolverConfig, pass_index: int):
    """Contributor table for one pass: (linear ids, weights, lighting RGB).

    The table is shooter-independent; the gather skips the entry equal to the
    shooter itself. Windows with no occupied texel produce no entry.
    """
    width = tg.width
    occ = tg.occupancy
    lig_rgb = tg.lig_in[:, :, :3]

    if cfg.mode in ("full", "directional"):
        idx = tg.occupied_linear()
        w = np.ones(idx.shape[0])
        rgb = lig_rgb.reshape(-1, 3)[idx]
        return idx, w, rgb

    if cfg.mode == "subdiv":
        ys, xs = np.nonzero(tg.lig_in[:, :, 3] > 0.0)
        idx = (xs + ys * width).astype(np.int64)
        w = tg.lig_in[ys, xs, 3].astype(np.float64)
        rgb = lig_rgb[ys, xs]
        return idx, w, rgb

    side = int(math.isqrt(cfg.window_m))
    m = side * side
    occw = _window_view(occ.astype(np.int64), side)          # (wh, ww, m)
    counts = occw.sum(axis=2)
    wh, ww = counts.shape
    nonempty = counts > 0

    if cfg.mode == "stride":
        rank = np.argmax(occw, axis=2)                         # first occupied, row-major
    elif cfg.mode == "monte_carlo":
        win_index = np.arange(wh * ww, dtype=np.uint64).reshape(wh, ww)
        pick = window_hash(cfg.seed, win_index, pass_index) % np.maximum(counts, 1).astype(np.uint64)
        cum = np.cumsum(occw, axis=2)
        rank = np.argmax(cum > pick[:, :, None].astype(np.int64), axis=2)
    elif cfg.mode == "mipmapped":
        rank = np.argmax(occw, axis=2)
    else:
        raise ConfigError(f"mode {cfg.mode!r} has no window selection")

    wy, wx = np.nonzero(nonempty)
    r = rank[wy, wx]
    tx = wx * side + r % side
    ty = wy * side + r // side
    idx = (tx + ty * width).astype(np.int64)
    if cfg.mode == "mipmapped":
        level = int(math.log2(side))
        pyr_rgb, _ = build_lig_mipmaps(tg, level)[level]
        rgb = pyr_rgb[wy, wx]
        w = counts[wy, wx].astype(np.float64)
    else:
        rgb = lig_rgb[ty, tx]
        w = np.full(idx.shape[0], float(m))
    order = np.argsort(idx, kind="stable")
    return idx[order], w[order], rgb[order]


def select_contributors(tg: TextureGroup, cfg: SolverConfig, shooter: PatchId,
                        pass_index: int) -> Iterator[tuple[PatchId, float]]:
    """Stream of (contributor, weight) pairs for one shooting patch."""
    idx, w, _ = select_pass_table(tg, cfg, pass_index)
    for k in range(idx.shape[0]):
        if idx[k] != shooter.linear:
            yield PatchId.from_linear(int(idx[k]), tg.width), float(w[k])


# --------------------------------------------------------------------------
# kernels

_VIS_TRACED, _VIS_VOXEL, _VIS_HYBRID, _VIS_CACHED = 0, 1, 2, 3
_NO_VOXELS = np.zeros((1, 1, 1), dtype=np.uint8)
_NO_WORDS = np.zeros(1, dtype=np.uint64)
_ZERO3 = np.zeros(3)
_ONE3 = np.ones(3)


@njit(cache=True, parallel=True)
def _gather_kernel(width, pos, nrm, mat, arf, emis,
                   contrib_idx, contrib_w, contrib_rgb, shooters,
                   node_min, node_max, node_left, node_right, node_start, node_count,
                   tri_v0, tri_e1, tri_e2, tri_index,
                   eps, rho, clamp, fclamp, dist_factor,
                   vis_mode, hybrid_cut,
                   vox_bits, vox_r, vox_org, vox_scale, vox_step,
                   cache_words, cache_n,
                   out_rgb, rays, marches, hits):
    for s in prange(shooters.shape[0]):
        i = shooters[s]
        ix = i % width
        iy = i // width
        pix = pos[iy, ix, 0]
        piy = pos[iy, ix, 1]
        piz = pos[iy, ix, 2]
        nix = nrm[iy, ix, 0]
        niy = nrm[iy, ix, 1]
        niz = nrm[iy, ix, 2]
        m0 = mat[iy, ix, 0]
        m1 = mat[iy, ix, 1]
        m2 = mat[iy, ix, 2]
        acc0 = emis[iy, ix, 0]
        acc1 = emis[iy, ix, 1]
        acc2 = emis[iy, ix, 2]
        nray = 0
        nmarch = 0
        nhit = 0
        for k in range(contrib_idx.shape[0]):
            j = contrib_idx[k]
            if j == i:
                continue
            jx = j % width
            jy = j // width
            dx = pos[jy, jx, 0] - pix
            dy = pos[jy, jx, 1] - piy
            dz = pos[jy, jx, 2] - piz
            dist = math.sqrt(dx * dx + dy * dy + dz * dz)

            visible = True
            if vis_mode == 3:
                nhit += 1
                lo = i if i < j else j
                hi = j if i < j else i
                ssum = (cache_n - 1 - hi) + lo
                addr = (cache_n - 1 - hi) + (ssum * (ssum + 1)) // 2
                if (cache_words[addr >> 6] >> np.uint64(addr & 63)) & np.uint64(1) == np.uint64(0):
                    visible = False
            elif vis_mode == 1 or (vis_mode == 2 and (j % 100) < hybrid_cut):
                nmarch += 1
                # endpoints pushed one cell along their normals so the march
                # does not self-occlude inside the surfaces' own voxel layers
                gax = (pix - vox_org[0]) * vox_scale[0] + nix
                gay = (piy - vox_org[1]) * vox_scale[1] + niy
                gaz = (piz - vox_org[2]) * vox_scale[2] + niz
                gbx = (pos[jy, jx, 0] - vox_org[0]) * vox_scale[0] + nrm[jy, jx, 0]
                gby = (pos[jy, jx, 1] - vox_org[1]) * vox_scale[1] + nrm[jy, jx, 1]
                gbz = (pos[jy, jx, 2] - vox_org[2]) * vox_scale[2] + nrm[jy, jx, 2]
                if _march(vox_bits, vox_r, gax, gay, gaz, gbx, gby, gbz, vox_step):
                    visible = False
            else:
                nray += 1
                if dist > 2.0 * eps:
                    inv = 1.0 / dist
                    if _occluded_ray(node_min, node_max, node_left, node_right,
                                     node_start, node_count,
                                     tri_v0, tri_e1, tri_e2, tri_index,
                                     pix, piy, piz, dx * inv, dy * inv, dz * inv,
                                     eps, dist - 2.0 * eps):
                        visible = False
            if not visible:
                continue

            r = dist * dist_factor
            if r <= 0.0:
                continue
            inv = 1.0 / dist
            dnx = dx * inv
            dny = dy * inv
            dnz = dz * inv
            ci = nix * dnx + niy * dny + niz * dnz
            cj = -(nrm[jy, jx, 0] * dnx + nrm[jy, jx, 1] * dny + nrm[jy, jx, 2] * dnz)
            if ci <= 0.0 or cj <= 0.0:
                continue
            f = arf[jy, jx] * ci * cj / (math.pi * r * r)
            if f > fclamp:
                f = fclamp
            base = contrib_w[k] * rho * f
            c0 = contrib_rgb[k, 0] * m0 * base
            c1 = contrib_rgb[k, 1] * m1 * base
            c2 = contrib_rgb[k, 2] * m2 * base
            if c0 > clamp:  # per-channel contribution cap
                c0 = clamp
            if c1 > clamp:
                c1 = clamp
            if c2 > clamp:
                c2 = clamp
            acc0 += c0
            acc1 += c1
            acc2 += c2
        out_rgb[iy, ix, 0] = acc0
        out_rgb[iy, ix, 1] = acc1
        out_rgb[iy, ix, 2] = acc2
        rays[s] = nray
        marches[s] = nmarch
        hits[s] = nhit


@njit(cache=True)
def _populate_cache_kernel(width, pos, occ_idx,
                           node_min, node_max, node_left, node_right,
                           node_start, node_count,
                           tri_v0, tri_e1, tri_e2, tri_index,
                           eps, cache_words, cache_n):
    """Trace every unordered occupied pair once (low -> high), store bits.

    Single-threaded by design: bit writes share words, so this is the
    single-writer arm of the concurrency contract.
    """
    traces = 0
    k = occ_idx.shape[0]
    for a in range(k):
        i = occ_idx[a]
        ix = i % width
        iy = i // width
        pix = pos[iy, ix, 0]
        piy = pos[iy, ix, 1]
        piz = pos[iy, ix, 2]
        for b in range(a + 1, k):
            j = occ_idx[b]
            jx = j % width
            jy = j // width
            dx = pos[jy, jx, 0] - pix
            dy = pos[jy, jx, 1] - piy
            dz = pos[jy, jx, 2] - piz
            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
            traces += 1
            visible = True
            if dist > 2.0 * eps:
                inv = 1.0 / dist
                if _occluded_ray(node_min, node_max, node_left, node_right,
                                 node_start, node_count,
                                 tri_v0, tri_e1, tri_e2, tri_index,
                                 pix, piy, piz, dx * inv, dy * inv, dz * inv,
                                 eps, dist - 2.0 * eps):
                    visible = False
            if visible:
                ssum = (cache_n - 1 - j) + i
                addr = (cache_n - 1 - j) + (ssum * (ssum + 1)) // 2
                cache_words[addr >> 6] |= np.uint64(1) << np.uint64(addr & 63)
    return traces


@njit(cache=True, parallel=True)
def _directional_kernel(width, height, pos, nrm, mat, emis, occ,
                        lig_look, look_shift, dirs, shooters,
                        node_min, node_max, node_left, node_right,
                        node_start, node_count,
                        tri_v0, tri_e1, tri_e2, tri_index, tri_uvs,
                        eps, rho, clamp, apply_cosine, neighbor_dy, neighbor_dx,
                        out_rgb, rays):
    n_dirs = dirs.shape[0]
    inv_count = 1.0 / (math.pi * n_dirs)
    for s in prange(shooters.shape[0]):
        i = shooters[s]
        ix = i % width
        iy = i // width
        pix = pos[iy, ix, 0]
        piy = pos[iy, ix, 1]
        piz = pos[iy, ix, 2]
        nx = nrm[iy, ix, 0]
        ny = nrm[iy, ix, 1]
        nz = nrm[iy, ix, 2]
        # branchless orthonormal basis around the normal
        sg = 1.0 if nz >= 0.0 else -1.0
        a = -1.0 / (sg + nz)
        b = nx * ny * a
        t1x = 1.0 + sg * nx * nx * a
        t1y = sg * b
        t1z = -sg * nx
        t2x = b
        t2y = sg + ny * ny * a
        t2z = -ny
        m0 = mat[iy, ix, 0]
        m1 = mat[iy, ix, 1]
        m2 = mat[iy, ix, 2]
        acc0 = emis[iy, ix, 0]
        acc1 = emis[iy, ix, 1]
        acc2 = emis[iy, ix, 2]
        nray = 0
        for d in range(n_dirs):
            wx = dirs[d, 0] * t1x + dirs[d, 1] * t2x + dirs[d, 2] * nx
            wy = dirs[d, 0] * t1y + dirs[d, 1] * t2y + dirs[d, 2] * ny
            wz = dirs[d, 0] * t1z + dirs[d, 1] * t2z + dirs[d, 2] * nz
            nray += 1
            tri, t, u, v = _closest_ray(node_min, node_max, node_left, node_right,
                                        node_start, node_count,
                                        tri_v0, tri_e1, tri_e2, tri_index,
                                        pix, piy, piz, wx, wy, wz, eps, math.inf)
            if tri < 0:
                continue
            uu = (1.0 - u - v) * tri_uvs[tri, 0, 0] + u * tri_uvs[tri, 1, 0] + v * tri_uvs[tri, 2, 0]
            vv = (1.0 - u - v) * tri_uvs[tri, 0, 1] + u * tri_uvs[tri, 1, 1] + v * tri_uvs[tri, 2, 1]
            tx = int(uu * width)
            ty = int(vv * height)
            if tx < 0:
                tx = 0
            elif tx >= width:
                tx = width - 1
            if ty < 0:
                ty = 0
            elif ty >= height:
                ty = height - 1
            if occ[ty, tx] == 0:
                found = False
                for nb in range(neighbor_dy.shape[0]):
                    ty2 = ty + neighbor_dy[nb]
                    tx2 = tx + neighbor_dx[nb]
                    if 0 <= ty2 < height and 0 <= tx2 < width and occ[ty2, tx2] != 0:
                        ty = ty2
                        tx = tx2
                        found = True
                        break
                if not found:
                    continue
            if tx == ix and ty == iy:
                continue
            rx = pos[ty, tx, 0] - pix
            ry = pos[ty, tx, 1] - piy
            rz = pos[ty, tx, 2] - piz
            r2 = rx * rx + ry * ry + rz * rz
            if r2 <= 0.0:
                continue
            g = 1.0
            if apply_cosine:
                g = wx * nx + wy * ny + wz * nz
                if g <= 0.0:
                    continue
            g = g / r2
            if g > clamp:
                g = clamp
            lx = tx >> look_shift
            ly = ty >> look_shift
            sc = g * rho * inv_count
            acc0 += lig_look[ly, lx, 0] * m0 * sc
            acc1 += lig_look[ly, lx, 1] * m1 * sc
            acc2 += lig_look[ly, lx, 2] * m2 * sc
        out_rgb[iy, ix, 0] = acc0
        out_rgb[iy, ix, 1] = acc1
        out_rgb[iy, ix, 2] = acc2
        rays[s] = nray


# --------------------------------------------------------------------------
# passes

def _row_strips(shooters: np.ndarray, width: int, per_shooter: int, limit: int):
    """Contiguous row strips with strip_size * per_shooter <= limit."""
    if shooters.shape[0] == 0:
        return
    rows = shooters // width
    boundaries = np.nonzero(np.diff(rows))[0] + 1
    row_groups = np.split(shooters, boundaries)
    strip: list[np.ndarray] = []
    size = 0
    for group in row_groups:
        if strip and (size + group.shape[0]) * max(per_shooter, 1) > limit:
            yield np.concatenate(strip)
            strip = []
            size = 0
        strip.append(group)
        size += group.shape[0]
    if strip:
        yield np.concatenate(strip)


def _fresh_lig_out(tg: TextureGroup, rgb: np.ndarray) -> np.ndarray:
    out = np.zeros_like(tg.lig_out)
    out[:, :, :3] = rgb
    out[:, :, 3] = tg.occupancy
    return out


def gather_pass(tg: TextureGroup, bvh: Bvh, cfg: SolverConfig, pass_index: int = 0,
                voxels: VoxelMap | None = None,
                cache: VisCache | None = None) -> tuple[TextureGroup, PassReport]:
    """One progressive radiosity iteration; lig_out receives the new lighting.

    The caller swaps lig_in/lig_out between passes. Output patches are
    processed in contiguous row strips so no batch exceeds the configured
    ray limit; batching changes scheduling only, never results.
    """
    cfg.validate(tg.resolution)
    if cfg.mode == "directional":
        raise ConfigError("directional mode runs through directional_pass")
    if cfg.visibility in ("voxel", "hybrid") and voxels is None:
        raise ConfigError(f"visibility {cfg.visibility!r} needs a voxel map")
    start = time.perf_counter()
    eps = bvh.default_epsilon() if cfg.epsilon is None else cfg.epsilon
    width = tg.width

    idx, w, rgb = select_pass_table(tg, cfg, pass_index)
    shooters = tg.occupied_linear()
    out_rgb = np.zeros((tg.height, tg.width, 3))
    rays_total = 0
    marches_total = 0
    hits_total = 0

    vis_mode = VISIBILITIES.index(cfg.visibility)
    if cfg.visibility == "cached":
        if cache is None:
            cache = VisCache.try_create(width * tg.height)
        if cache is None:  # beyond capacity: every query falls back to tracing
            vis_mode = _VIS_TRACED
        elif not cache.populated:
            traced = _populate_cache_kernel(
                width, tg.pos, shooters, *bvh.arrays(), eps,
                cache.words, cache.n)
            cache.populated = True
            cache.trace_count += int(traced)
            rays_total += int(traced)

    vox_bits, vox_r = _NO_VOXELS, 1
    vox_org, vox_scale = _ZERO3, _ONE3
    if voxels is not None:
        vox_bits, vox_r = voxels.bits, voxels.resolution
        vox_org, vox_scale = voxels.origin, voxels.scale
    words = cache.words if (cache is not None and vis_mode == _VIS_CACHED) else _NO_WORDS
    cache_n = cache.n if cache is not None else width * tg.height
    hybrid_cut = int(round(100.0 * cfg.hybrid_ratio))

    for strip in _row_strips(shooters, width, idx.shape[0], cfg.batch_ray_limit):
        rays = np.zeros(strip.shape[0], dtype=np.int64)
        marches = np.zeros(strip.shape[0], dtype=np.int64)
        hits = np.zeros(strip.shape[0], dtype=np.int64)
        _gather_kernel(width, tg.pos, tg.nrm, tg.mat, tg.arf, tg.emission,
                       idx, w, np.ascontiguousarray(rgb), strip,
                       *bvh.arrays(),
                       eps, cfg.reflectivity_factor, cfg.clamp_value(),
                       cfg.form_factor_clamp, cfg.distance_factor,
                       vis_mode, hybrid_cut,
                       vox_bits, vox_r, vox_org, vox_scale, cfg.step_scale,
                       words, cache_n,
                       out_rgb, rays, marches, hits)
        rays_total += int(rays.sum())
        marches_total += int(marches.sum())
        hits_total += int(hits.sum())

    if cache is not None and vis_mode == _VIS_CACHED:
        cache.hit_count += hits_total
    new_tg = dataclasses.replace(tg, lig_out=_fresh_lig_out(tg, out_rgb))
    report = PassReport(
        pass_index=pass_index, mode=cfg.mode,
        rays_traced=rays_total, raymarches=marches_total, cache_hits=hits_total,
        wall_ms=1000.0 * (time.perf_counter() - start),
        energy_sum=float(out_rgb.sum()),
    )
    return new_tg, report


def directional_pass(tg: TextureGroup, bvh: Bvh, dirs, cfg: SolverConfig,
                     pass_index: int = 0, scene=None) -> tuple[TextureGroup, PassReport]:
    """Hemisphere-sampled gather: one closest-hit ray per direction per patch.

    Hits resolve to patches through the hit triangle's UVs; rays that land on
    seam texels fall back to the nearest occupied neighbour, and misses
    contribute nothing.
    """
    cfg.validate(tg.resolution)
    if scene is None:
        raise ConfigError("directional_pass needs the scene for hit UV lookup")
    directions = np.ascontiguousarray(getattr(dirs, "directions", dirs), dtype=np.float64)
    if directions.shape[0] == 0:
        raise ConfigError("empty direction set")
    start = time.perf_counter()
    eps = bvh.default_epsilon() if cfg.epsilon is None else cfg.epsilon

    if cfg.blur_level > 0:
        lig_look = np.ascontiguousarray(
            build_lig_mipmaps(tg, cfg.blur_level)[cfg.blur_level][0])
    else:
        lig_look = np.ascontiguousarray(tg.lig_in[:, :, :3])
    occ = np.ascontiguousarray(tg.occupancy.astype(np.uint8))
    neighbor_dy = np.array([o[0] for o in NEIGHBOR_OFFSETS], dtype=np.int64)
    neighbor_dx = np.array([o[1] for o in NEIGHBOR_OFFSETS], dtype=np.int64)

    shooters = tg.occupied_linear()
    out_rgb = np.zeros((tg.height, tg.width, 3))
    rays_total = 0
    for strip in _row_strips(shooters, tg.width, directions.shape[0], cfg.batch_ray_limit):
        rays = np.zeros(strip.shape[0], dtype=np.int64)
        _directional_kernel(tg.width, tg.height, tg.pos, tg.nrm, tg.mat, tg.emission,
                            occ, lig_look, cfg.blur_level, directions, strip,
                            *bvh.arrays(), np.ascontiguousarray(scene.uvs),
                            eps, cfg.reflectivity_factor, cfg.clamp_value(),
                            cfg.apply_cosine, neighbor_dy, neighbor_dx,
                            out_rgb, rays)
        rays_total += int(rays.sum())

    new_tg = dataclasses.replace(tg, lig_out=_fresh_lig_out(tg, out_rgb))
    report = PassReport(
        pass_index=pass_index, mode="directional",
        rays_traced=rays_total, raymarches=0, cache_hits=0,
        wall_ms=1000.0 * (time.perf_counter() - start),
        energy_sum=float(out_rgb.sum()),
    )
    return new_tg, report


# --------------------------------------------------------------------------
# dense oracle

MAX_DENSE_PATCHES = 4096


def classical_solve(tg: TextureGroup, bvh: Bvh, bounces: int,
                    cfg: SolverConfig | None = None) -> np.ndarray:
    """Truncated Neumann-series radiosity on the dense view-factor matrix.

    Builds F(i,j) * V(i,j) once over all occupied patches (visibility traced
    once per unordered pair, mirrored by symmetry) and iterates
    L_k = L_e + rho * mat * (F L_{k-1}). Serves as the small-scale oracle for
    progressive passes; bounces = 0 returns the emission map.
    """
    from .tracer import occluded_batch

    cfg = cfg or SolverConfig()
    occ_idx = tg.occupied_linear()
    k = occ_idx.shape[0]
    if k > MAX_DENSE_PATCHES:
        raise ValueError(f"{k} patches exceed the dense solver bound {MAX_DENSE_PATCHES}")
    eps = bvh.default_epsilon() if cfg.epsilon is None else cfg.epsilon
    xs = occ_idx % tg.width
    ys = occ_idx // tg.width
    pos = tg.pos[ys, xs, :3]
    nrm = tg.nrm[ys, xs]
    arf = tg.arf[ys, xs]
    matc = tg.mat[ys, xs]
    emis = tg.emission[ys, xs]

    vis = np.ones((k, k), dtype=bool)
    iu, ju = np.triu_indices(k, 1)
    chunk = 1 << 20
    for s in range(0, iu.shape[0], chunk):
        ii = iu[s:s + chunk]
        jj = ju[s:s + chunk]
        blocked = occluded_batch(bvh, pos[ii], pos[jj], eps)
        vis[ii[blocked], jj[blocked]] = False
        vis[jj[blocked], ii[blocked]] = False

    F = np.zeros((k, k))
    block = max(1, (1 << 22) // max(k, 1))
    for s in range(0, k, block):
        e = min(k, s + block)
        d = pos[None, :, :] - pos[s:e, None, :]
        dist = np.linalg.norm(d, axis=2)
        r = dist * cfg.distance_factor
        with np.errstate(invalid="ignore", divide="ignore"):
            dn = d / dist[:, :, None]
            ci = np.einsum("ik,ijk->ij", nrm[s:e], dn)
            cj = -np.einsum("jk,ijk->ij", nrm, dn)
            f = arf[None, :] * np.maximum(ci, 0.0) * np.maximum(cj, 0.0) / (np.pi * r * r)
        f[~np.isfinite(f)] = 0.0
        np.minimum(f, cfg.form_factor_clamp, out=f)
        F[s:e] = f * vis[s:e]
    np.fill_diagonal(F, 0.0)

    light = emis.copy()
    for _ in range(bounces):
        light = emis + cfg.reflectivity_factor * matc * (F @ light)

    out = np.zeros((tg.height, tg.width, 3))
    out[ys, xs] = light
    return out


# --------------------------------------------------------------------------
# bake driver

@dataclass
class BakeResult:
    tg: TextureGroup
    reports: list[PassReport] = field(default_factory=list)
    cache: VisCache | None = None
    voxels: VoxelMap | None = None


def set_workers(workers: int | None) -> int:
    """Clamp and apply the solver thread count; returns the effective value."""
    import numba

    available = numba.config.NUMBA_NUM_THREADS
    n = available if workers is None else max(1, min(workers, available))
    numba.set_num_threads(n)
    return n


def run_bake(scene, resolution, cfg: SolverConfig, dirs=None, on_pass=None) -> BakeResult:
    """Full pipeline: rasterize, build acceleration structures, iterate passes.

    ``on_pass(pass_index, tg, report)`` fires after each pass with lig_out
    holding that pass's result, before the ping-pong swap.
    """
    from .scene import validate_uv_layout
    from .tracer import build_bvh
    from .uvraster import OverlapError, build_texture_group
    from .voxel import voxelize

    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    cfg.validate(resolution)
    if cfg.mode == "directional" and dirs is None:
        raise ConfigError("directional mode needs a direction set")
    set_workers(cfg.workers)

    overlaps = validate_uv_layout(scene, resolution)
    if overlaps:
        r = overlaps[0]
        raise OverlapError(
            f"UV layout has {len(overlaps)} overlapping texels at {resolution}; "
            f"first at ({r.x},{r.y}) between triangles {r.first_triangle} and {r.second_triangle}")
    tg = build_texture_group(scene, resolution)
    bvh = build_bvh(scene)

    voxels = None
    if cfg.visibility in ("voxel", "hybrid"):
        voxels = voxelize(scene, cfg.voxel_resolution)
    cache = None
    if cfg.visibility == "cached":
        cache = VisCache.try_create(resolution[0] * resolution[1])

    reports: list[PassReport] = []
    for p in range(cfg.passes):
        if cfg.mode == "subdiv":
            build_alpha_quadtree(tg, cfg.gradient_threshold, cfg.max_node)
        if cfg.mode == "directional":
            tg, report = directional_pass(tg, bvh, dirs, cfg, pass_index=p, scene=scene)
        else:
            tg, report = gather_pass(tg, bvh, cfg, pass_index=p, voxels=voxels, cache=cache)
        reports.append(report)
        if on_pass is not None:
            on_pass(p, tg, report)
        lig_in = tg.lig_out.copy()
        lig_in[:, :, 3] = tg.occupancy
        tg = dataclasses.replace(tg, lig_in=lig_in)
    return BakeResult(tg=tg, reports=reports, cache=cache, voxels=voxels)
