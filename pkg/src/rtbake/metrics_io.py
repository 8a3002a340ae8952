"""Lightmap quality metrics, texture export and pass reporting.

The float texture container is ``.rtex``: magic RTEX, three little-endian
u32s (width, height, channels), then row-major little-endian float32 data.
PNG export is a plain linear clamp-and-quantize with round-half-up, so
identical maps always produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

RTEX_MAGIC = b"RTEX"
DFPR_WORST = np.sqrt(3.0)  # all-white vs all-black


class RtexError(Exception):
    """Malformed, truncated or mismatched .rtex data."""


def dfpr(candidate: np.ndarray, reference: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean per-texel Euclidean RGB distance between two lightmaps.

    Ranges over [0, sqrt(3)] for values in [0,1]. By default all texels count
    (matched pipelines share occupancy, so non-patches contribute 0); pass a
    boolean mask to restrict the average to occupied texels only.
    """
    a = np.asarray(candidate, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"lightmap shapes differ: {a.shape} vs {b.shape}")
    dist = np.linalg.norm(a - b, axis=-1)
    if mask is not None:
        if mask.shape != dist.shape:
            raise ValueError("mask shape does not match lightmap resolution")
        if not mask.any():
            return 0.0
        return float(dist[mask].mean())
    return float(dist.mean())


def export_png(map_rgb: np.ndarray, path, clamp_to: float = 1.0) -> None:
    """8-bit PNG with channel = round_half_up(255 * min(value/clamp_to, 1))."""
    if clamp_to <= 0.0:
        raise ValueError("clamp_to must be positive")
    arr = np.asarray(map_rgb, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None].repeat(3, axis=2)
    q = np.floor(255.0 * np.clip(arr / clamp_to, 0.0, 1.0) + 0.5).astype(np.uint8)
    Image.fromarray(q[:, :, :3], mode="RGB").save(Path(path), format="PNG")


def export_rtex(map_arr: np.ndarray, path) -> None:
    arr = np.asarray(map_arr, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(RTEX_MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(arr.astype("<f4").tobytes(order="C"))


def import_rtex(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != RTEX_MAGIC:
        raise RtexError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 16:
        raise RtexError(f"{path}: truncated header")
    w, h, c = struct.unpack("<III", data[4:16])
    need = 16 + 4 * w * h * c
    if len(data) < need:
        raise RtexError(f"{path}: truncated payload ({len(data)} bytes, need {need})")
    flat = np.frombuffer(data[16:need], dtype="<f4")
    return flat.reshape(h, w, c).copy()


@dataclass
class PassReport:
    pass_index: int
    mode: str
    rays_traced: int
    raymarches: int
    cache_hits: int
    wall_ms: float
    energy_sum: float

    def to_json(self, config: dict | None = None) -> str:
        row = {
            "pass": self.pass_index,
            "mode": self.mode,
            "rays_traced": self.rays_traced,
            "raymarches": self.raymarches,
            "cache_hits": self.cache_hits,
            "wall_ms": self.wall_ms,
            "energy_sum": self.energy_sum,
        }
        if config is not None:
            row["config"] = config
        return json.dumps(row, sort_keys=True)


def write_reports(reports: list[PassReport], path, config: dict | None = None) -> None:
    """JSON-lines pass report; every line embeds the resolved config."""
    with open(path, "w") as f:
        for r in reports:
            f.write(r.to_json(config) + "\n")


def read_reports(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def upscale_bilinear(map_rgb: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear magnification for previews; never feeds solver state."""
    arr = np.asarray(map_rgb, dtype=np.float64)
    h, w = arr.shape[:2]
    ys = (np.arange(h * factor) + 0.5) / factor - 0.5
    xs = (np.arange(w * factor) + 0.5) / factor - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy
