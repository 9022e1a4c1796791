"""Adaptive floater detection and removal.

For every training view the relative difference between mode-selected and
alpha-blended depth is computed. The mean dip statistic of those maps over
all views sets how aggressive the cut is: a scene whose difference
histograms look bimodal gets a lower percentile, hence a lower threshold
and more pixels flagged. On each flagged pixel every gaussian in front of
and including the mode gaussian that still visibly covers the pixel is
removed. Deletion happens once, after all views are processed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from splatprune.modality import view_dip
from splatprune.raster import RenderOptions, RenderOutput, gaussian_alpha, render
from splatprune.scene import Camera, Scene

log = logging.getLogger(__name__)

DEPTH_EPS = 1e-8


@dataclass(frozen=True)
class PruneConfig:
    """Threshold curve ``percentile = a * exp(b * mean_dip)`` and the selection alpha floor."""

    a: float = 97.0
    b: float = -8.0
    power_thresh: float = 1.0 / 255.0

    def __post_init__(self):
        if not 0.0 < self.a <= 100.0:
            raise ValueError("a must lie in (0, 100]")
        if not self.b < 0.0:
            raise ValueError("b must be negative")
        if not 0.0 <= self.power_thresh < 1.0:
            raise ValueError("power_thresh must lie in [0, 1)")


@dataclass
class ViewReport:
    name: str
    delta: np.ndarray
    dip: float | None
    n_positive: int
    threshold: float | None = None
    mask: np.ndarray | None = None
    selected: set[int] = field(default_factory=set)

    @property
    def skipped(self) -> bool:
        return self.dip is None


@dataclass
class FloaterReport:
    views: list[ViewReport]
    d_bar: float | None
    percentile: float | None
    pruned_ids: np.ndarray
    n_before: int

    @property
    def n_pruned(self) -> int:
        return int(self.pruned_ids.size)


def relative_diff(out: RenderOutput) -> np.ndarray:
    """(d_mode - d_alpha) / d_alpha per pixel; 0 where d_alpha <= 1e-8."""
    valid = out.d_alpha > DEPTH_EPS
    safe = np.where(valid, out.d_alpha, 1.0)
    return np.where(valid, (out.d_mode - out.d_alpha) / safe, 0.0)


def threshold_percentile(d_bar: float, cfg: PruneConfig | None = None) -> float:
    cfg = cfg or PruneConfig()
    return cfg.a * math.exp(cfg.b * d_bar)


def threshold_from_dip(delta: np.ndarray, d_bar: float, cfg: PruneConfig | None = None) -> float:
    """Linear-interpolation percentile of the strictly positive entries of ``delta``."""
    pos = np.asarray(delta, dtype=np.float64)
    pos = pos[pos > 0]
    if pos.size == 0:
        raise ValueError("relative-difference map has no positive entries")
    return float(np.percentile(pos, threshold_percentile(d_bar, cfg)))


def floater_mask(delta: np.ndarray, tau: float) -> np.ndarray:
    return np.asarray(delta) > tau


def select_gaussians(out: RenderOutput, mask: np.ndarray, cfg: PruneConfig | None = None) -> set[int]:
    """Ids of gaussians from the first contributor up to and including the mode on every masked pixel.

    A candidate is kept only if its alpha at the pixel centre exceeds
    ``cfg.power_thresh``. Pixels without contributors are ignored.
    """
    cfg = cfg or PruneConfig()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != out.shape:
        raise ValueError(f"mask shape {mask.shape} does not match render {out.shape}")
    ys, xs = np.nonzero(mask)
    ranges = out.mode_range[ys, xs]
    populated = (ranges >= 0).all(axis=1)
    selected: set[int] = set()
    for (start, mode), x, y in zip(ranges[populated], xs[populated], ys[populated]):
        ids = out.point_list[start : mode + 1]
        alpha = gaussian_alpha(out.means2d[ids], out.conics[ids], out.opacities[ids], x, y)
        selected.update(ids[alpha > cfg.power_thresh].tolist())
    return selected


def diagnose_views(
    scene: Scene, cameras: Sequence[Camera], opts: RenderOptions | None = None
) -> tuple[list[ViewReport], list[RenderOutput], float | None]:
    """First pass: render every view, compute relative differences and their dips."""
    views, outputs = [], []
    for cam in cameras:
        out = render(scene, cam, opts)
        delta = relative_diff(out)
        dip = view_dip(delta)
        n_pos = int((delta > 0).sum())
        if dip is None:
            log.info("view %s skipped for the dip test (%d positive values)", cam.image_name, n_pos)
        views.append(ViewReport(cam.image_name, delta, dip, n_pos))
        outputs.append(out)
    dips = [v.dip for v in views if v.dip is not None]
    d_bar = float(np.mean(dips)) if dips else None
    return views, outputs, d_bar


def prune_floaters(
    scene: Scene,
    cameras: Sequence[Camera],
    cfg: PruneConfig | None = None,
    opts: RenderOptions | None = None,
) -> FloaterReport:
    """Detect floaters in every view and remove them from ``scene`` in place."""
    cfg = cfg or PruneConfig()
    if not cameras:
        raise ValueError("prune_floaters needs at least one camera")
    if len(scene) == 0:
        raise ValueError("cannot prune an empty scene")
    n_before = len(scene)
    views, outputs, d_bar = diagnose_views(scene, cameras, opts)
    if d_bar is None:
        log.warning("no view had enough positive relative differences; nothing pruned")
        return FloaterReport(views, None, None, np.zeros(0, dtype=np.int64), n_before)

    perc = threshold_percentile(d_bar, cfg)
    union: set[int] = set()
    for view, out in zip(views, outputs):
        if view.n_positive == 0:
            continue
        view.threshold = threshold_from_dip(view.delta, d_bar, cfg)
        view.mask = floater_mask(view.delta, view.threshold)
        view.selected = select_gaussians(out, view.mask, cfg)
        log.info("view %s: %d gaussians selected", view.name, len(view.selected))
        union |= view.selected

    pruned = np.array(sorted(union), dtype=np.int64)
    scene.remove(pruned)
    return FloaterReport(views, d_bar, perc, pruned, n_before)
