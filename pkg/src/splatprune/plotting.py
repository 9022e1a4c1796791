"""Diagnostic figures written straight to PNG files.

Figures are built on a bare Agg canvas, so importing this module never
touches pyplot state or needs a display.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# no timestamps or version strings, so reruns give identical bytes
_PNG_METADATA = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
    return path


def histogram_counts(delta: np.ndarray, bins: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of the strictly positive relative differences.

    Returns ``(counts, edges)``; both are empty when nothing is positive.
    """
    pos = np.asarray(delta, dtype=np.float64)
    pos = pos[pos > 0]
    if pos.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    hi = float(pos.max())
    lo = float(pos.min())
    if hi == lo:
        hi = lo + max(abs(lo), 1.0) * 1e-6
    counts, edges = np.histogram(pos, bins=bins, range=(lo, hi))
    return counts, edges


def plot_delta_histogram(delta, path, *, threshold=None, dip=None, title="", bins: int = 64) -> Path:
    """Histogram of positive relative depth differences with the pruning cutoff marked."""
    counts, edges = histogram_counts(delta, bins)
    fig = Figure(figsize=(5.0, 3.2))
    ax = fig.add_subplot(1, 1, 1)
    if counts.size:
        ax.stairs(counts, edges, fill=True, color="0.55")
        if threshold is not None:
            ax.axvline(threshold, color="crimson", lw=1.2, label=f"cutoff {threshold:.4g}")
            ax.legend(frameon=False, fontsize=8)
        ax.set_yscale("log")
    else:
        ax.text(0.5, 0.5, "no positive differences", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("(d_mode - d_alpha) / d_alpha")
    ax.set_ylabel("pixels")
    label = title
    if dip is not None:
        label = f"{title}  dip={dip:.4f}".strip()
    ax.set_title(label, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_depth_panels(d_alpha, d_mode, delta, path, *, mask=None, title="") -> Path:
    """Alpha-blended depth, mode depth and their relative difference side by side."""
    fig = Figure(figsize=(9.0, 3.0))
    fg = np.asarray(d_alpha) > 0
    vmin = float(np.min(d_mode[fg])) if fg.any() else 0.0
    vmax = float(np.max(d_mode[fg])) if fg.any() else 1.0
    panels = (
        (d_alpha, "d_alpha", "viridis", vmin, vmax),
        (d_mode, "d_mode", "viridis", vmin, vmax),
    )
    for i, (img, name, cmap, lo, hi) in enumerate(panels, start=1):
        ax = fig.add_subplot(1, 3, i)
        im = ax.imshow(np.where(fg, img, np.nan), cmap=cmap, vmin=lo, vmax=hi)
        ax.set_title(name, fontsize=9)
        ax.set_axis_off()
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    ax = fig.add_subplot(1, 3, 3)
    lim = float(np.max(np.abs(delta))) or 1.0
    im = ax.imshow(delta, cmap="coolwarm", vmin=-lim, vmax=lim)
    if mask is not None and np.any(mask):
        ax.contour(np.asarray(mask, dtype=float), levels=[0.5], colors="k", linewidths=0.6)
    ax.set_title("relative difference", fontsize=9)
    ax.set_axis_off()
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)
