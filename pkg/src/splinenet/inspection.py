"""Plot data and distance rankings for learned distance-mode kernels."""

from __future__ import annotations

import csv
import io
from dataclasses import replace

import numpy as np

from . import engine
from .errors import NoDistanceKernels
from .model import ModelParams, SplineNetConfig, prepare, spline_of
from .spline import eval_spline

GRID_POINTS = 256
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _check(cfg: SplineNetConfig) -> None:
    if cfg.kernel_mode != "distance":
        raise NoDistanceKernels("checkpoint uses multiply-mode kernels; nothing to rank by distance")


def kernel_curves(params: ModelParams, cfg: SplineNetConfig, block: int = 0, n: int = GRID_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Dense evaluations of every kernel on the unit span: t (n,), values (kernels, n, channels)."""
    _check(cfg)
    t = np.linspace(0.0, 1.0, n)
    vals = np.stack([eval_spline(spline_of(params, cfg, block, j), t) for j in range(cfg.kernels)])
    return t, vals


def curves_csv(t: np.ndarray, vals: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kernel", "t"] + [f"ch{c}" for c in range(vals.shape[2])])
    for j in range(vals.shape[0]):
        for i, ti in enumerate(t):
            w.writerow([j, repr(float(ti))] + [repr(float(v)) for v in vals[j, i]])
    return buf.getvalue()


def curve_svg(t: np.ndarray, v: np.ndarray, title: str, width: int = 480, height: int = 240, pad: int = 30) -> str:
    """Polyline per channel; the y range always includes zero."""
    lo, hi = min(0.0, float(v.min())), max(0.0, float(v.max()))
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0

    def x(ti):
        return pad + (width - 2 * pad) * ti

    def y(vi):
        return height - pad - (height - 2 * pad) * (vi - lo) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<title>{title}</title>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{y(0.0):.2f}" x2="{width - pad}" y2="{y(0.0):.2f}" stroke="#999" stroke-dasharray="4 3"/>',
        f'<text x="{pad}" y="{pad - 10}" font-size="12" font-family="sans-serif">{title}  [{lo:.3g}, {hi:.3g}]</text>',
    ]
    for c in range(v.shape[1]):
        pts = " ".join(f"{x(ti):.2f},{y(vi):.2f}" for ti, vi in zip(t, v[:, c]))
        out.append(f'<polyline fill="none" stroke="{_PALETTE[c % len(_PALETTE)]}" stroke-width="1.5" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def kernel_distances(params: ModelParams, cfg: SplineNetConfig, series, block: int = 0, batch_size: int = 64) -> np.ndarray:
    """Integrated squared distance between each sample's block input and each kernel: (n, kernels)."""
    _check(cfg)
    if not 0 <= block < cfg.blocks:
        raise ValueError(f"block {block} out of range [0, {cfg.blocks})")
    merged = params.merged()
    plain = replace(cfg, distance_integral=False)
    items = prepare(cfg, series)
    out = []
    for i in range(0, len(items), batch_size):
        for pk in engine.chunked(items[i : i + batch_size], cfg.grid):
            X = pk.X
            for j in range(block):
                O, _ = engine.block_fw(X, pk, merged[f"block{j}.W"], merged[f"block{j}.b"], merged[f"block{j}.kernels"], cfg)
                if cfg.area_norm:
                    O = O / (merged[f"block{j}.running_area"] + cfg.eps)[None, None, :, None]
                X = O
            O, _ = engine.block_fw(X, pk, merged[f"block{block}.W"], merged[f"block{block}.b"], merged[f"block{block}.kernels"], plain)
            out.append(engine.areas_fw(O, pk.widths))
    return np.concatenate(out, axis=0)


def rank_kernels(distances: np.ndarray, labels, n_classes: int) -> list[dict]:
    """Mean distance per (kernel, class) with ranks within the class and within the kernel (1 = closest)."""
    labels = np.asarray(labels)
    means = np.full((distances.shape[1], n_classes), np.nan)
    for c in range(n_classes):
        sel = labels == c
        if sel.any():
            means[:, c] = distances[sel].mean(axis=0)
    rows = []
    for c in range(n_classes):
        if np.isnan(means[0, c]):
            continue
        by_class = np.argsort(means[:, c], kind="stable")
        class_rank = np.empty_like(by_class)
        class_rank[by_class] = np.arange(1, len(by_class) + 1)
        for j in range(distances.shape[1]):
            row = means[j]
            kernel_rank = 1 + int(np.sum(row[~np.isnan(row)] < row[c]))
            rows.append({"class": c, "kernel": j, "mean_distance": float(means[j, c]), "rank_in_class": int(class_rank[j]), "rank_in_kernel": kernel_rank})
    rows.sort(key=lambda r: (r["class"], r["rank_in_class"]))
    return rows


def ranking_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["class", "kernel", "mean_distance", "rank_in_class", "rank_in_kernel"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "mean_distance": repr(r["mean_distance"])})
    return buf.getvalue()
