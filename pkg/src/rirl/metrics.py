"""Evaluation metrics and table/plot emission.

Tables come in three shapes: per-node summaries, per-relation metric
rows, and the per-run exploration summary whose columns follow the
discovery order. Plots are dependency-free SVG line charts with a CSV
sidecar holding the same data.
"""

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .errors import MetricError, PersistenceError, PlotError


def nse(pred, obs):
    """Nash-Sutcliffe efficiency: 1 - SSE / SS_about_mean, at most 1."""
    p = np.asarray(pred, dtype=float)
    o = np.asarray(obs, dtype=float)
    if p.shape != o.shape or p.ndim != 1:
        raise MetricError(f"nse: need equal-length 1-D series, got {p.shape} vs {o.shape}")
    if p.size < 2:
        raise MetricError("nse: need at least 2 points")
    denom = np.sum((o - o.mean()) ** 2)
    if denom <= 0.0:
        raise MetricError("nse: observations are constant")
    return float(1.0 - np.sum((o - p) ** 2) / denom)


@dataclass
class MetricRow:
    effect: str
    causes: str
    rmse_scaled: float
    rmse_unscaled: float
    mask_bce: float
    latent_kld: float


NODE_COLUMNS = ["node", "dim", "nonzero_rate", "mean", "std", "min", "max",
                "rmse_scaled", "rmse_unscaled", "mask_bce"]
RELATION_COLUMNS = ["effect", "causes", "rmse_scaled", "rmse_unscaled",
                    "mask_bce", "latent_kld"]


def _fmt(v):
    if isinstance(v, float):
        return "%.6g" % v
    return str(v)


def emit_tables(rows, path, kind="relation"):
    """Write one CSV of the requested shape; returns the path written.

    kind "node": per-node summary dicts with NODE_COLUMNS keys.
    kind "relation": MetricRow instances.
    kind "exploration": (edge_label, kld, gain) triples in discovery
    order, emitted as one column per edge with KLD and Gain rows.
    """
    if not rows:
        raise PersistenceError("emit_tables: no rows to write")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            if kind == "node":
                writer.writerow(NODE_COLUMNS)
                for row in rows:
                    writer.writerow([_fmt(row[c]) for c in NODE_COLUMNS])
            elif kind == "relation":
                writer.writerow(RELATION_COLUMNS)
                for row in rows:
                    writer.writerow([_fmt(getattr(row, c)) for c in RELATION_COLUMNS])
            elif kind == "exploration":
                writer.writerow(["row"] + [r[0] for r in rows])
                writer.writerow(["KLD"] + [_fmt(float(r[1])) for r in rows])
                writer.writerow(["Gain"] + [_fmt(float(r[2])) for r in rows])
            else:
                raise PersistenceError(f"emit_tables: unknown kind {kind!r}")
    except OSError as exc:
        raise PersistenceError(f"emit_tables: cannot write {path}: {exc}") from exc
    return path


PALETTE = ["#1965b0", "#dc050c", "#4eb265", "#f7a600", "#882e72", "#777777"]


def emit_plot(truth, lines, path):
    """One SVG chart plus a CSV sidecar.

    truth is drawn as dots, each (label, series) in lines as a
    polyline. Returns (svg_path, csv_path).
    """
    truth = np.asarray(truth, dtype=float)
    if truth.size == 0:
        raise PlotError("emit_plot: empty truth series")
    for label, series in lines:
        if len(series) != truth.size:
            raise PlotError(f"emit_plot: series {label!r} length differs from truth")
    width, height, pad = 900, 360, 45
    all_vals = np.concatenate([truth] + [np.asarray(s, dtype=float) for _, s in lines])
    lo, hi = float(all_vals.min()), float(all_vals.max())
    if hi - lo < 1e-12:
        hi = lo + 1.0
    n = truth.size

    def sx(i):
        return pad + (width - 2 * pad) * (i / max(n - 1, 1))

    def sy(v):
        return height - pad - (height - 2 * pad) * ((v - lo) / (hi - lo))

    buf = io.StringIO()
    buf.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
              f'viewBox="0 0 {width} {height}">\n')
    buf.write(f'<rect width="{width}" height="{height}" fill="white"/>\n')
    buf.write(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
              'stroke="black"/>\n')
    buf.write(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n')
    buf.write(f'<text x="{width // 2}" y="{height - 8}" font-size="12" '
              'text-anchor="middle">step</text>\n')
    buf.write(f'<text x="14" y="{height // 2}" font-size="12" text-anchor="middle" '
              f'transform="rotate(-90 14 {height // 2})">value</text>\n')
    for i, (label, series) in enumerate(lines):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(j):.2f},{sy(v):.2f}"
                       for j, v in enumerate(np.asarray(series, dtype=float)))
        buf.write(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                  'stroke-width="1.4"/>\n')
        buf.write(f'<text x="{width - pad - 150}" y="{pad + 16 * i}" font-size="12" '
                  f'fill="{color}">{label}</text>\n')
    for j, v in enumerate(truth):
        buf.write(f'<circle cx="{sx(j):.2f}" cy="{sy(v):.2f}" r="1.6" fill="black"/>\n')
    buf.write(f'<text x="{width - pad - 150}" y="{pad + 16 * len(lines)}" '
              'font-size="12" fill="black">truth</text>\n')
    buf.write("</svg>\n")
    svg_path = path if path.endswith(".svg") else path + ".svg"
    csv_path = os.path.splitext(svg_path)[0] + ".csv"
    try:
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "truth"] + [label for label, _ in lines])
            for j in range(n):
                writer.writerow(["%d" % j, "%.17g" % truth[j]] +
                                ["%.17g" % float(s[j]) for _, s in lines])
    except OSError as exc:
        raise PersistenceError(f"emit_plot: cannot write {svg_path}: {exc}") from exc
    return svg_path, csv_path
