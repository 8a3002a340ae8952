"""Matplotlib renderings of bake reports.

Every bake writes its JSON-lines report; these helpers turn those rows into
small diagnostic figures saved next to the report (energy convergence and
per-pass query counts).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_report_figures(rows: list[dict], outdir) -> list[Path]:
    """Render per-pass energy and query-count figures; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if not rows:
        return []
    passes = [r["pass"] for r in rows]
    written = []

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(passes, [r["energy_sum"] for r in rows], marker="o", color="#b3541e")
    ax.set_xlabel("pass")
    ax.set_ylabel("total lighting energy")
    ax.set_title(f"energy convergence ({rows[0]['mode']})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = outdir / "report_energy.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    width = 0.27
    xs = [p - width for p in passes]
    ax.bar(xs, [r["rays_traced"] for r in rows], width, label="rays traced")
    ax.bar(passes, [r["raymarches"] for r in rows], width, label="raymarches")
    ax.bar([p + width for p in passes], [r["cache_hits"] for r in rows], width,
           label="cache hits")
    ax.set_xlabel("pass")
    ax.set_ylabel("queries")
    ax.set_title("visibility queries per pass")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = outdir / "report_rays.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)
    return written
