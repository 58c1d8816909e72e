"""Embedding export, 2-D PCA projection and per-class topographic amplitude maps."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import EegRecording, WindowSet
from .params import rng_stream

log = logging.getLogger(__name__)

RING_COUNTS = (16, 32, 48, 32)
RING_RADII = (0.25, 0.5, 0.75, 0.95)


@dataclass
class EmbeddingRecord:
    rec_id: str
    window: int
    class_id: int
    vector: np.ndarray


@dataclass
class ElectrodeLayout:
    xy: np.ndarray  # n x 2, inside the unit disk

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64)
        if self.xy.ndim != 2 or self.xy.shape[1] != 2:
            raise ValueError("layout must be n x 2")
        if np.any(np.hypot(self.xy[:, 0], self.xy[:, 1]) > 1.0):
            raise ValueError("electrode outside the unit disk")


@dataclass
class TopomapGrid:
    class_id: int
    values: np.ndarray  # G x G, NaN outside the disk
    mask: np.ndarray  # True inside the disk
    electrode_values: np.ndarray


def ring_layout(counts=RING_COUNTS, radii=RING_RADII) -> ElectrodeLayout:
    """Synthetic 128-electrode cap: concentric rings, evenly spaced angles."""
    pts = []
    for n, r in zip(counts, radii):
        a = 2 * np.pi * np.arange(n) / n
        pts.append(np.column_stack([r * np.cos(a), r * np.sin(a)]))
    return ElectrodeLayout(np.vstack(pts))


def extract_embeddings(model, windows: WindowSet, sample_per_class: int = 100, seed: int = 0,
                       classes: Sequence[int] | None = None, batch_size: int = 64) -> list[EmbeddingRecord]:
    """Head-output embeddings for a seeded random sample of windows per class."""
    if sample_per_class <= 0 or len(windows) == 0:
        return []
    rng = rng_stream(seed, "embeddings")
    wanted = sorted(set(windows.y.tolist())) if classes is None else list(classes)
    picks = []
    for c in wanted:
        idx = np.flatnonzero(windows.y == c)
        if len(idx) < sample_per_class:
            log.warning("class %d has only %d windows; taking all", c, len(idx))
            chosen = idx
        else:
            chosen = np.sort(rng.choice(idx, sample_per_class, replace=False))
        picks.append(chosen)
    sel = np.concatenate(picks) if picks else np.zeros(0, dtype=np.int64)
    emb = model.embeddings(windows.x[sel], batch_size)
    return [
        EmbeddingRecord(windows.rec_ids[windows.rec[i]] if windows.rec_ids else str(windows.rec[i]),
                        int(windows.window[i]), int(windows.y[i]), emb[j])
        for j, i in enumerate(sel)
    ]


def embeddings_csv(records: Sequence[EmbeddingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = len(records[0].vector) if records else 0
    dims = {len(r.vector) for r in records}
    if len(dims) > 1:
        raise ValueError(f"embedding dimensions differ: {sorted(dims)}")
    w.writerow(["rec_id", "window", "class"] + [f"e{i}" for i in range(d)])
    for r in records:
        w.writerow([r.rec_id, r.window, r.class_id] + [repr(float(v)) for v in r.vector])
    return buf.getvalue()


@dataclass
class Projection:
    coords: np.ndarray  # n x 2
    components: np.ndarray  # 2 x d, orthonormal rows (a zero row if rank < 2)
    explained: np.ndarray  # variance along each component
    explained_ratio: float


def pca_2d(data, max_iter: int = 20000, tol: float = 1e-13, seed: int = 0) -> Projection:
    """Top-2 principal components by orthogonal (subspace) power iteration."""
    if len(data) and isinstance(data[0], EmbeddingRecord):
        data = np.stack([r.vector for r in data])
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise ValueError("pca_2d needs at least 3 records")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / len(x)
    d = cov.shape[0]
    total = np.trace(cov)
    scale = max(total, 1e-300)

    q, _ = np.linalg.qr(rng_stream(seed, "pca").standard_normal((d, min(2, d))))
    for _ in range(max_iter):
        z, _ = np.linalg.qr(cov @ q)
        # align signs so convergence is measured on the subspace, not orientation
        z *= np.sign(np.sum(z * q, axis=0) + 1e-300)
        if np.max(np.abs(z - q)) < tol:
            q = z
            break
        q = z
    lam = np.einsum("ij,ij->j", q, cov @ q)
    order = np.argsort(-lam)
    q, lam = q[:, order], lam[order]
    comps = np.zeros((2, d))
    for j in range(q.shape[1]):
        if lam[j] > 1e-12 * scale:
            v = q[:, j]
            comps[j] = v * np.sign(v[np.argmax(np.abs(v))])
    lam2 = np.zeros(2)
    lam2[: len(lam)] = np.where(np.any(comps[: len(lam)] != 0, axis=1), lam, 0.0)
    return Projection(xc @ comps.T, comps, lam2, float(lam2.sum() / total) if total > 0 else 0.0)


def class_channel_means(recs: Sequence[EegRecording]) -> np.ndarray:
    """Mean absolute amplitude per channel over time and recordings."""
    if not recs:
        raise ValueError("empty class")
    return np.mean([np.mean(np.abs(np.asarray(r.samples, dtype=np.float64)), axis=1) for r in recs], axis=0)


def idw_grid(values: np.ndarray, layout: ElectrodeLayout, grid: int = 64, power: float = 2.0):
    """Inverse-distance-weighted interpolation onto cell centres of a G x G grid over [-1, 1]^2."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) != len(layout.xy):
        raise ValueError(f"{len(values)} values for {len(layout.xy)} electrodes")
    c = -1 + (np.arange(grid) + 0.5) * 2.0 / grid
    gx, gy = np.meshgrid(c, c)  # row index = y, column index = x
    mask = np.hypot(gx, gy) <= 1.0
    pts = np.column_stack([gx[mask], gy[mask]])
    d = np.linalg.norm(pts[:, None, :] - layout.xy[None, :, :], axis=2)
    out = np.full((grid, grid), np.nan)
    hit = d.min(axis=1) < 1e-12
    w = 1.0 / np.maximum(d, 1e-300) ** power
    interp = (w @ values) / w.sum(axis=1)
    interp[hit] = values[d[hit].argmin(axis=1)]
    out[mask] = interp
    return out, mask


def class_mean_topomap(recs_by_class: dict[int, Sequence[EegRecording]], layout: ElectrodeLayout,
                       grid: int = 64, power: float = 2.0) -> list[TopomapGrid]:
    maps = []
    for cls in sorted(recs_by_class):
        ev = class_channel_means(recs_by_class[cls])
        values, mask = idw_grid(ev, layout, grid, power)
        maps.append(TopomapGrid(cls, values, mask, ev))
    return maps


def nearest_cell(xy, grid: int) -> tuple[int, int]:
    """(row, col) of the grid cell containing point ``xy``."""
    col = int(np.clip(np.floor((xy[0] + 1) * grid / 2), 0, grid - 1))
    row = int(np.clip(np.floor((xy[1] + 1) * grid / 2), 0, grid - 1))
    return row, col


def _colour(t: float) -> str:
    # linear blue (min) -> white -> red (max)
    t = float(np.clip(t, 0.0, 1.0))
    if t < 0.5:
        u = t / 0.5
        r, g, b = 255 * u, 255 * u, 255
    else:
        u = (t - 0.5) / 0.5
        r, g, b = 255, 255 * (1 - u), 255 * (1 - u)
    return f"#{int(round(r)):02x}{int(round(g)):02x}{int(round(b)):02x}"


def topomap_svg(tm: TopomapGrid, layout: ElectrodeLayout | None = None, size: int = 320) -> str:
    """One disk image; colour is linear in value between the map's own min and max."""
    g = tm.values.shape[0]
    vals = tm.values[tm.mask]
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo if hi > lo else 1.0
    cell = size / g
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 40}" '
        f'viewBox="0 0 {size} {size + 40}">',
        f"<title>class {tm.class_id} mean |amplitude|</title>",
        '<clipPath id="disk"><circle cx="{0}" cy="{0}" r="{0}"/></clipPath>'.format(size / 2),
        '<g clip-path="url(#disk)" shape-rendering="crispEdges">',
    ]
    for i in range(g):
        y = size - (i + 1) * cell  # grid row 0 is y = -1, drawn at the bottom
        for j in range(g):
            if tm.mask[i, j]:
                parts.append(
                    f'<rect x="{j * cell:.3f}" y="{y:.3f}" width="{cell:.3f}" height="{cell:.3f}" '
                    f'fill="{_colour((tm.values[i, j] - lo) / span)}"/>'
                )
    parts.append("</g>")
    parts.append(f'<circle cx="{size / 2}" cy="{size / 2}" r="{size / 2 - 0.5}" fill="none" stroke="black"/>')
    if layout is not None:
        for x, yv in layout.xy:
            cx, cy = (x + 1) * size / 2, size - (yv + 1) * size / 2
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.2" fill="black"/>')
    parts.append(
        f'<text x="4" y="{size + 16}" font-size="12" font-family="monospace">class {tm.class_id}  '
        f"scale: linear blue-white-red</text>"
    )
    parts.append(
        f'<text x="4" y="{size + 32}" font-size="12" font-family="monospace">min {lo:.6g}  max {hi:.6g}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def topomap_csv(tm: TopomapGrid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in tm.values:
        w.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])
    return buf.getvalue()
