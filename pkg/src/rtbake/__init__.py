"""rtbake: CPU radiosity lightmap baker with a software BVH visibility core."""

from .hemisampler import DirectionSet, generate_directions, project_to_hemisphere
from .metrics_io import PassReport, dfpr, export_png, export_rtex, import_rtex
from .scene import Material, Scene, SceneError, Triangle, Vertex, load_scene, save_scene, validate_uv_layout
from .solver import (
    BakeResult,
    ConfigError,
    SolverConfig,
    VisCache,
    build_alpha_quadtree,
    build_lig_mipmaps,
    cached_visibility,
    cantor,
    classical_solve,
    directional_pass,
    form_factor,
    gather_pass,
    pair_address,
    run_bake,
    select_contributors,
)
from .tracer import Bvh, Hit, Ray, build_bvh, closest_hit, intersect_triangle, occluded
from .uvraster import (
    OverlapError,
    PatchId,
    TextureGroup,
    build_texture_group,
    patch_area,
    sew_seams,
)
from .voxel import VoxelMap, raymarch_occluded, voxelize

__version__ = "0.1.0"
