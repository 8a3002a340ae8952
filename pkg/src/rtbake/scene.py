"""Triangle scene loading and validation.

Scenes are triangle soups with per-vertex position/normal/UV and flat
per-material albedo + emission. The on-disk format is a restricted OBJ
(``v``/``vt``/``vn``/``f``/``usemtl``, triangulated, every face vertex fully
indexed) with a companion JSON material table. All light sources are emissive
surfaces; there are no point or directional lights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NORMAL_TOL = 1e-5
DEGENERATE_AREA = 1e-12
UV_TOL = 1e-9


class SceneError(Exception):
    """Raised for unreadable, malformed or degenerate scene input."""


@dataclass(frozen=True)
class Material:
    name: str
    albedo: tuple[float, float, float]
    emission: tuple[float, float, float]

    def __post_init__(self):
        if not all(0.0 <= c <= 1.0 for c in self.albedo):
            raise SceneError(f"material {self.name!r}: albedo outside [0,1]: {self.albedo}")
        if not all(np.isfinite(c) and c >= 0.0 for c in self.emission):
            raise SceneError(f"material {self.name!r}: emission must be finite and >= 0")


@dataclass(frozen=True)
class Vertex:
    position: np.ndarray  # (3,) world units
    normal: np.ndarray    # (3,) unit
    uv: np.ndarray        # (2,) in [0,1]


@dataclass(frozen=True)
class Triangle:
    v1: Vertex
    v2: Vertex
    v3: Vertex
    material_index: int

    @property
    def world_area(self) -> float:
        e1 = self.v2.position - self.v1.position
        e2 = self.v3.position - self.v1.position
        return 0.5 * float(np.linalg.norm(np.cross(e1, e2)))

    @property
    def uv_area(self) -> float:
        e1 = self.v2.uv - self.v1.uv
        e2 = self.v3.uv - self.v1.uv
        return 0.5 * abs(float(e1[0] * e2[1] - e1[1] * e2[0]))


@dataclass
class Scene:
    """Immutable triangle soup with structure-of-arrays storage.

    positions/normals/uvs are indexed ``[triangle, corner]``; ``corner`` order
    matches the face winding from the input file. Normals are unit length.
    """

    positions: np.ndarray       # (T, 3, 3) float64
    normals: np.ndarray         # (T, 3, 3) float64, unit
    uvs: np.ndarray             # (T, 3, 2) float64 in [0,1]
    material_index: np.ndarray  # (T,) int32
    materials: list[Material] = field(default_factory=list)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        self.uvs = np.ascontiguousarray(self.uvs, dtype=np.float64)
        self.material_index = np.ascontiguousarray(self.material_index, dtype=np.int32)
        if self.num_triangles == 0:
            raise SceneError("empty scene: no triangles")
        if self.material_index.min() < 0 or self.material_index.max() >= len(self.materials):
            raise SceneError("face references a material index outside the material table")

    @property
    def num_triangles(self) -> int:
        return self.positions.shape[0]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        flat = self.positions.reshape(-1, 3)
        return flat.min(axis=0), flat.max(axis=0)

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def triangle(self, i: int) -> Triangle:
        verts = [
            Vertex(self.positions[i, k].copy(), self.normals[i, k].copy(), self.uvs[i, k].copy())
            for k in range(3)
        ]
        return Triangle(*verts, material_index=int(self.material_index[i]))

    def albedo_array(self) -> np.ndarray:
        return np.array([m.albedo for m in self.materials], dtype=np.float64)

    def emission_array(self) -> np.ndarray:
        return np.array([m.emission for m in self.materials], dtype=np.float64)


def _check_geometry(scene: Scene) -> Scene:
    # Renormalize normals; reject zero normals and zero-area world triangles.
    norms = np.linalg.norm(scene.normals, axis=2)
    if np.any(norms < 1e-12):
        t, k = np.argwhere(norms < 1e-12)[0]
        raise SceneError(f"triangle {t} corner {k}: zero-length normal")
    scene.normals /= norms[:, :, None]

    e1 = scene.positions[:, 1] - scene.positions[:, 0]
    e2 = scene.positions[:, 2] - scene.positions[:, 0]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    if np.any(areas < DEGENERATE_AREA):
        t = int(np.argmin(areas))
        raise SceneError(f"triangle {t}: degenerate in world space (area {areas[t]:g})")

    if scene.uvs.min() < -UV_TOL or scene.uvs.max() > 1.0 + UV_TOL:
        raise SceneError("UV coordinate outside [0,1]")
    np.clip(scene.uvs, 0.0, 1.0, out=scene.uvs)
    return scene


def load_materials(path: Path) -> list[Material]:
    try:
        entries = json.loads(Path(path).read_text())
    except OSError as exc:
        raise SceneError(f"cannot read material table {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SceneError(f"malformed material table {path}: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise SceneError(f"material table {path} must be a non-empty JSON array")
    mats = []
    for e in entries:
        try:
            mats.append(Material(e["name"], tuple(e["albedo"]), tuple(e["emission"])))
        except (KeyError, TypeError) as exc:
            raise SceneError(f"material entry {e!r} missing name/albedo/emission") from exc
    return mats


def material_sidecar(path: Path) -> Path:
    return Path(path).with_suffix(".mtl.json")


def load_scene(path, fmt: str = "obj_subset", materials_path=None) -> Scene:
    """Load a triangulated OBJ-subset scene plus its JSON material table.

    Every face must be a triangle and every face vertex must carry
    position, UV and normal indices (``f a/b/c a/b/c a/b/c``). The material
    table defaults to ``<scene>.mtl.json`` next to the OBJ file.
    """
    if fmt != "obj_subset":
        raise SceneError(f"unsupported scene format {fmt!r}")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SceneError(f"cannot read scene {path}: {exc}") from exc

    materials = load_materials(materials_path or material_sidecar(path))
    mat_by_name = {m.name: i for i, m in enumerate(materials)}

    vs: list[list[float]] = []
    vts: list[list[float]] = []
    vns: list[list[float]] = []
    tri_pos, tri_nrm, tri_uv, tri_mat = [], [], [], []
    current_mat = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag, args = parts[0], parts[1:]
        if tag == "v":
            vs.append([float(x) for x in args[:3]])
        elif tag == "vt":
            vts.append([float(x) for x in args[:2]])
        elif tag == "vn":
            vns.append([float(x) for x in args[:3]])
        elif tag == "usemtl":
            name = args[0]
            if name not in mat_by_name:
                raise SceneError(f"{path}:{lineno}: unknown material {name!r}")
            current_mat = mat_by_name[name]
        elif tag == "f":
            if len(args) != 3:
                raise SceneError(f"{path}:{lineno}: non-triangle face with {len(args)} vertices")
            p, n, u = [], [], []
            for corner in args:
                idx = corner.split("/")
                if len(idx) != 3 or not idx[1]:
                    raise SceneError(f"{path}:{lineno}: face vertex {corner!r} lacks a vt reference")
                if not idx[2]:
                    raise SceneError(f"{path}:{lineno}: face vertex {corner!r} lacks a vn reference")
                vi, ti, ni = (int(x) for x in idx)
                try:
                    p.append(vs[vi - 1])
                    u.append(vts[ti - 1])
                    n.append(vns[ni - 1])
                except IndexError as exc:
                    raise SceneError(f"{path}:{lineno}: face index out of range") from exc
            tri_pos.append(p)
            tri_uv.append(u)
            tri_nrm.append(n)
            tri_mat.append(current_mat)
        # other OBJ tags (o, g, s, mtllib) are ignored

    if not tri_pos:
        raise SceneError(f"{path}: empty scene (no faces)")
    scene = Scene(
        positions=np.array(tri_pos),
        normals=np.array(tri_nrm),
        uvs=np.array(tri_uv),
        material_index=np.array(tri_mat),
        materials=materials,
    )
    return _check_geometry(scene)


def save_scene(scene: Scene, path, materials_path=None) -> None:
    """Write a scene back to the OBJ subset (exact float round-trip)."""
    path = Path(path)
    lines = []
    t = scene.num_triangles
    for i in range(t):
        for k in range(3):
            lines.append("v " + " ".join(repr(float(x)) for x in scene.positions[i, k]))
            lines.append("vt " + " ".join(repr(float(x)) for x in scene.uvs[i, k]))
            lines.append("vn " + " ".join(repr(float(x)) for x in scene.normals[i, k]))
    current = -1
    for i in range(t):
        if scene.material_index[i] != current:
            current = int(scene.material_index[i])
            lines.append(f"usemtl {scene.materials[current].name}")
        base = 3 * i
        lines.append("f " + " ".join(f"{base + k + 1}/{base + k + 1}/{base + k + 1}" for k in range(3)))
    path.write_text("\n".join(lines) + "\n")

    mt = materials_path or material_sidecar(path)
    entries = [
        {"name": m.name, "albedo": list(m.albedo), "emission": list(m.emission)}
        for m in scene.materials
    ]
    Path(mt).write_text(json.dumps(entries, indent=2) + "\n")


@dataclass(frozen=True)
class OverlapReport:
    x: int
    y: int
    first_triangle: int
    second_triangle: int


def validate_uv_layout(scene: Scene, resolution) -> list[OverlapReport]:
    """Report every texel that two or more triangles claim at this resolution.

    An empty list means the UV layout is safe to rasterize: no two triangles
    cover the same texel center.
    """
    from .uvraster import rasterize_owners  # local import to avoid a cycle

    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    owners, overlaps = rasterize_owners(scene, resolution, collect_overlaps=True)
    return [OverlapReport(x, y, a, b) for (x, y, a, b) in overlaps]
