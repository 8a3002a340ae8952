"""Shared scene fixtures: hand-authored boxes with a known UV atlas.

The box is a unit cube [0,1]^3 with inward faces (z up) and an optional
downward-facing emitter quad just below the ceiling. Each quad gets its own
island in a 4x2 UV atlas; islands are centered in their cells and sized so
island edges land exactly on texel boundaries at the test resolutions.

Atlas cells (col, row), cell size 0.25 x 0.5:
    floor(0,0) ceiling(1,0) wall_y0(2,0) wall_y1(3,0)
    wall_x0(0,1) wall_x1(1,1) emitter(2,1)

With island_scale = 1 each island spans 0.1875 x 0.375 UV (6x12 texels at
32^2), total UV coverage 7 * 0.0703125 = 49.22% (emitter box) or 42.19%
(closed box, 6 islands).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from rtbake.scene import Scene, load_scene

BASE_ISLAND_W = 0.1875  # of the 0.25-wide cell
BASE_ISLAND_H = 0.375   # of the 0.5-tall cell

# Quads as (corner0..corner3 CCW seen from inside, normal), z-up unit cube.
_FACES = {
    "floor":   (((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)), (0, 0, 1)),
    "ceiling": (((0, 0, 1), (0, 1, 1), (1, 1, 1), (1, 0, 1)), (0, 0, -1)),
    "wall_y0": (((0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 0, 0)), (0, 1, 0)),
    "wall_y1": (((0, 1, 0), (1, 1, 0), (1, 1, 1), (0, 1, 1)), (0, -1, 0)),
    "wall_x0": (((0, 0, 0), (0, 1, 0), (0, 1, 1), (0, 0, 1)), (1, 0, 0)),
    "wall_x1": (((1, 0, 0), (1, 0, 1), (1, 1, 1), (1, 1, 0)), (-1, 0, 0)),
}
_CELLS = {
    "floor": (0, 0), "ceiling": (1, 0), "wall_y0": (2, 0), "wall_y1": (3, 0),
    "wall_x0": (0, 1), "wall_x1": (1, 1), "emitter": (2, 1),
}

# Non-round coordinates: patch centers are small dyadic/24th rationals, and a
# round emitter span can put occlusion segments exactly through the emitter
# edge, where intersection results become direction-dependent.
EMITTER_SPAN = (0.3012345179, 0.6987654821)
EMITTER_Z = 0.9942718282


def island_uv(name: str, island_scale: float) -> tuple[float, float, float, float]:
    col, row = _CELLS[name]
    w = BASE_ISLAND_W * island_scale
    h = BASE_ISLAND_H * island_scale
    u0 = col * 0.25 + (0.25 - w) / 2.0
    v0 = row * 0.5 + (0.5 - h) / 2.0
    return u0, v0, u0 + w, v0 + h


def island_coverage(island_scale: float, faces: int) -> float:
    return faces * (BASE_ISLAND_W * island_scale) * (BASE_ISLAND_H * island_scale)


def _quad(corners, normal, uv_rect):
    """Two triangles with a consistent affine quad -> UV-rect mapping."""
    u0, v0, u1, v1 = uv_rect
    uvs = [(u0, v0), (u1, v0), (u1, v1), (u0, v1)]
    tris = []
    for a, b, c in ((0, 1, 2), (0, 2, 3)):
        tris.append((
            [corners[a], corners[b], corners[c]],
            [normal, normal, normal],
            [uvs[a], uvs[b], uvs[c]],
        ))
    return tris


def box_geometry(emitter: bool, island_scale: float):
    tris = []
    mats = []
    for name in _FACES:
        corners, normal = _FACES[name]
        for t in _quad(corners, normal, island_uv(name, island_scale)):
            tris.append(t)
            mats.append(0)
    if emitter:
        lo, hi = EMITTER_SPAN
        corners = ((lo, lo, EMITTER_Z), (lo, hi, EMITTER_Z),
                   (hi, hi, EMITTER_Z), (hi, lo, EMITTER_Z))
        for t in _quad(corners, (0, 0, -1), island_uv("emitter", island_scale)):
            tris.append(t)
            mats.append(1)
    return tris, mats


def box_materials(emission: float) -> list[dict]:
    return [
        {"name": "wall", "albedo": [0.75, 0.75, 0.75], "emission": [0.0, 0.0, 0.0]},
        {"name": "light", "albedo": [0.0, 0.0, 0.0],
         "emission": [emission, emission, emission]},
    ]


def write_box_obj(path: Path, emitter: bool = True, island_scale: float = 1.0,
                  emission: float = 15.0) -> Path:
    tris, mats = box_geometry(emitter, island_scale)
    lines = []
    for pos, nrm, uv in tris:
        for k in range(3):
            lines.append("v " + " ".join(repr(float(x)) for x in pos[k]))
            lines.append("vt " + " ".join(repr(float(x)) for x in uv[k]))
            lines.append("vn " + " ".join(repr(float(x)) for x in nrm[k]))
    current = -1
    names = ["wall", "light"]
    for i, m in enumerate(mats):
        if m != current:
            current = m
            lines.append(f"usemtl {names[m]}")
        base = 3 * i
        lines.append("f " + " ".join(f"{base + k + 1}/{base + k + 1}/{base + k + 1}"
                                     for k in range(3)))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    path.with_suffix(".mtl.json").write_text(json.dumps(box_materials(emission)) + "\n")
    return path


def make_box_scene(tmpdir, emitter: bool = True, island_scale: float = 1.0,
                   emission: float = 15.0, name: str = "box") -> Scene:
    path = write_box_obj(Path(tmpdir) / f"{name}.obj", emitter, island_scale, emission)
    return load_scene(path)


def make_full_wall_scene() -> Scene:
    """Single quad whose UV spans the whole [0,1]^2 map: every texel occupied."""
    corners = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0))
    tris = _quad(corners, (0, 0, 1), (0.0, 0.0, 1.0, 1.0))
    positions = np.array([t[0] for t in tris])
    normals = np.array([t[1] for t in tris])
    uvs = np.array([t[2] for t in tris])
    from rtbake.scene import Material

    return Scene(
        positions=positions, normals=normals, uvs=uvs,
        material_index=np.zeros(2, dtype=np.int32),
        materials=[Material("glow", (0.5, 0.5, 0.5), (1.0, 1.0, 1.0))],
    )


def random_triangle_scene(n: int, seed: int, spread: float = 1.0) -> Scene:
    """Random triangle soup in the unit cube (tracer stress fixture)."""
    from rtbake.scene import Material

    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.1, 0.9, size=(n, 1, 3))
    offsets = rng.normal(scale=0.08 * spread, size=(n, 3, 3))
    positions = centers + offsets
    e1 = positions[:, 1] - positions[:, 0]
    e2 = positions[:, 2] - positions[:, 0]
    fn = np.cross(e1, e2)
    norm = np.linalg.norm(fn, axis=1, keepdims=True)
    keep = norm[:, 0] > 1e-9
    positions, fn, norm = positions[keep], fn[keep], norm[keep]
    normals = np.repeat((fn / norm)[:, None, :], 3, axis=1)
    uvs = rng.uniform(0.0, 1.0, size=(positions.shape[0], 3, 2))
    return Scene(
        positions=positions, normals=normals, uvs=uvs,
        material_index=np.zeros(positions.shape[0], dtype=np.int32),
        materials=[Material("gray", (0.5, 0.5, 0.5), (0.0, 0.0, 0.0))],
    )
