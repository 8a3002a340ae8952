"""Command-line front end: bake, gen-dirs, dfpr, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Configuration comes from flags, optionally layered over a JSON config file
(flags override the file, the file overrides built-in defaults).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import figures, hemisampler, metrics_io, solver
from .scene import SceneError, load_scene
from .uvraster import OverlapError, build_texture_group, sew_seams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


_BAKE_DEFAULTS = {
    "resolution": 64,
    "mode": "full",
    "window": 1,
    "passes": 2,
    "visibility": "traced",
    "hybrid_ratio": 0.5,
    "voxel_resolution": 64,
    "reflectivity": solver.DEFAULT_RHO,
    "clamp": solver.DEFAULT_CLAMP,
    "no_clamp": False,
    "form_factor_clamp": 1.0,
    "distance_factor": 1.0,
    "epsilon": None,
    "batch_ray_limit": solver.DEFAULT_BATCH_RAY_LIMIT,
    "gradient_threshold": 0.05,
    "max_node": 16,
    "blur_level": 0,
    "seed": 0,
    "workers": None,
    "dirs": None,
    "png_clamp": 1.0,
    "no_figures": False,
    "out": "bake_out",
}


def _build_parser() -> _Parser:
    p = _Parser(prog="rtbake", description="UV-space radiosity lightmap baker")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bake", help="bake lightmaps for a scene")
    b.add_argument("--scene", required=True, help="OBJ-subset scene path")
    b.add_argument("--config", help="JSON config file (flags override it)")
    b.add_argument("--res", dest="resolution", type=int)
    b.add_argument("--mode", choices=solver.MODES)
    b.add_argument("--window", type=int, help="patches per sample (window area m)")
    b.add_argument("--passes", type=int)
    b.add_argument("--visibility", choices=solver.VISIBILITIES)
    b.add_argument("--hybrid-ratio", dest="hybrid_ratio", type=float)
    b.add_argument("--voxel-res", dest="voxel_resolution", type=int)
    b.add_argument("--reflectivity", type=float)
    b.add_argument("--clamp", type=float, help="contribution clamp magnitude")
    b.add_argument("--no-clamp", dest="no_clamp", action="store_const", const=True)
    b.add_argument("--form-factor-clamp", dest="form_factor_clamp", type=float)
    b.add_argument("--distance-factor", dest="distance_factor", type=float)
    b.add_argument("--epsilon", type=float)
    b.add_argument("--batch-ray-limit", dest="batch_ray_limit", type=int)
    b.add_argument("--gradient-threshold", dest="gradient_threshold", type=float)
    b.add_argument("--max-node", dest="max_node", type=int)
    b.add_argument("--blur-level", dest="blur_level", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--dirs", help="direction table for directional mode")
    b.add_argument("--png-clamp", dest="png_clamp", type=float)
    b.add_argument("--no-figures", dest="no_figures", action="store_const", const=True)
    b.add_argument("--out", help="output directory")

    g = sub.add_parser("gen-dirs", help="pre-generate a hemisphere direction table")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    d = sub.add_parser("dfpr", help="mean RGB distance between two .rtex lightmaps")
    d.add_argument("a")
    d.add_argument("b")

    i = sub.add_parser("inspect", help="dump the rasterized texture group")
    i.add_argument("--scene", required=True)
    i.add_argument("--res", dest="resolution", type=int, default=128)
    i.add_argument("--out", required=True)
    return p


def _resolve_bake_config(args: argparse.Namespace) -> dict:
    cfg = dict(_BAKE_DEFAULTS)
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SceneError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["scene"] = args.scene
    return cfg


def _solver_config(cfg: dict) -> solver.SolverConfig:
    return solver.SolverConfig(
        mode=cfg["mode"],
        window_m=cfg["window"],
        gradient_threshold=cfg["gradient_threshold"],
        max_node=cfg["max_node"],
        reflectivity_factor=cfg["reflectivity"],
        contribution_clamp=None if cfg["no_clamp"] else cfg["clamp"],
        form_factor_clamp=cfg["form_factor_clamp"],
        distance_factor=cfg["distance_factor"],
        epsilon=cfg["epsilon"],
        batch_ray_limit=cfg["batch_ray_limit"],
        visibility=cfg["visibility"],
        hybrid_ratio=cfg["hybrid_ratio"],
        voxel_resolution=cfg["voxel_resolution"],
        passes=cfg["passes"],
        seed=cfg["seed"],
        blur_level=cfg["blur_level"],
        workers=cfg["workers"],
    )


def cmd_bake(args: argparse.Namespace) -> int:
    cfg = _resolve_bake_config(args)
    scfg = _solver_config(cfg)
    res = (cfg["resolution"], cfg["resolution"])
    scfg.validate(res)
    scene = load_scene(cfg["scene"])
    dirs = None
    if scfg.mode == "directional":
        if not cfg["dirs"]:
            raise UsageError("directional mode needs --dirs <table>")
        dirs = hemisampler.load_directions(cfg["dirs"])

    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    echo = {**cfg, "scene": str(cfg["scene"])}

    def on_pass(p, tg, report):
        sewn = sew_seams(tg)
        rgb = sewn.lig_out[:, :, :3]
        metrics_io.export_png(rgb, outdir / f"lightmap_pass{p:02d}.png", cfg["png_clamp"])
        metrics_io.export_rtex(rgb, outdir / f"lightmap_pass{p:02d}.rtex")
        print(f"pass {p}: rays={report.rays_traced} raymarches={report.raymarches} "
              f"cache_hits={report.cache_hits} energy={report.energy_sum:.6g} "
              f"wall_ms={report.wall_ms:.1f}")

    result = solver.run_bake(scene, res, scfg, dirs=dirs, on_pass=on_pass)
    metrics_io.write_reports(result.reports, outdir / "report.jsonl", config=echo)
    if not cfg["no_figures"]:
        rows = metrics_io.read_reports(outdir / "report.jsonl")
        figures.render_report_figures(rows, outdir)
    print(f"wrote {scfg.passes} lightmap(s) to {outdir}")
    return EXIT_OK


def cmd_gen_dirs(args: argparse.Namespace) -> int:
    ds = hemisampler.generate_directions(args.count, args.seed)
    hemisampler.save_directions(ds, args.out)
    nn = ds.nearest_neighbor_distances()
    print(f"wrote {len(ds)} directions to {args.out}")
    print(f"nearest-neighbor distance: min={nn.min():.6f} median={np.median(nn):.6f}")
    return EXIT_OK


def cmd_dfpr(args: argparse.Namespace) -> int:
    a = metrics_io.import_rtex(args.a)
    b = metrics_io.import_rtex(args.b)
    value = metrics_io.dfpr(a, b)
    print(f"{value:.6f}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    scene = load_scene(args.scene)
    res = (args.resolution, args.resolution)
    tg = build_texture_group(scene, res)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    lo, hi = scene.bounds
    span = np.where((hi - lo) > 0, hi - lo, 1.0)

    dumps = {
        "pos": (tg.pos[:, :, :3], (tg.pos[:, :, :3] - lo) / span),
        "nrm": (tg.nrm, tg.nrm * 0.5 + 0.5),
        "mat": (tg.mat, tg.mat),
        "arf": (tg.arf, tg.arf / max(float(tg.arf.max()), 1e-30)),
        "emission": (tg.emission, tg.emission / max(float(tg.emission.max()), 1.0)),
    }
    for name, (raw, png) in dumps.items():
        metrics_io.export_rtex(raw, outdir / f"{name}.rtex")
        metrics_io.export_png(png, outdir / f"{name}.png", clamp_to=1.0)
    print(f"wrote {len(dumps)} map pairs to {outdir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "bake":
            return cmd_bake(args)
        if args.command == "gen-dirs":
            return cmd_gen_dirs(args)
        if args.command == "dfpr":
            return cmd_dfpr(args)
        if args.command == "inspect":
            return cmd_inspect(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SceneError, OverlapError, metrics_io.RtexError, solver.ConfigError,
            ValueError) as exc:
        print(f"data error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
