"""Pearson correlation, the patch-wise depth correlation loss and image metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEGENERATE_VAR = 1e-12
MIN_VALID_FRACTION = 0.25


@dataclass(frozen=True)
class PatchSpec:
    """Patch sampling for :func:`local_pearson_loss`.

    ``box_p`` is the patch side in pixels, ``p_corr`` the fraction of the
    ``floor(H/box_p) * floor(W/box_p)`` patch grid drawn per call.
    """

    box_p: int = 128
    p_corr: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if int(self.box_p) != self.box_p or self.box_p < 1:
            raise ValueError("box_p must be a positive integer")
        if not 0.0 < self.p_corr <= 1.0:
            raise ValueError("p_corr must lie in (0, 1]")


@dataclass(frozen=True)
class PatchLossResult:
    loss: float
    n_patches: int
    n_skipped: int
    n_degenerate: int


def pcc(x, y, *, with_flag: bool = False):
    """Pearson correlation of two equal-length vectors.

    Returns 0.0 when either variance is below 1e-12; with ``with_flag`` the
    result is ``(value, degenerate)``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("pcc needs at least two samples")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = np.mean(xc * xc)
    vy = np.mean(yc * yc)
    if vx < DEGENERATE_VAR or vy < DEGENERATE_VAR:
        return (0.0, True) if with_flag else 0.0
    r = float(np.mean(xc * yc) / math.sqrt(vx * vy))
    r = min(1.0, max(-1.0, r))
    return (r, False) if with_flag else r


def _check_maps(d_src, d_target, spec: PatchSpec):
    d_src = np.asarray(d_src, dtype=np.float64)
    d_target = np.asarray(d_target, dtype=np.float64)
    if d_src.ndim != 2 or d_src.shape != d_target.shape:
        raise ValueError(f"depth maps must be 2D with equal shape, got {d_src.shape} and {d_target.shape}")
    h, w = d_src.shape
    if spec.box_p > min(h, w):
        raise ValueError(f"patch size {spec.box_p} exceeds map size {h}x{w}")
    return d_src, d_target


def sample_patches(shape: tuple[int, int], spec: PatchSpec) -> np.ndarray:
    """Top-left corners (row, col) of the patches drawn for ``spec``; corners may repeat or overlap."""
    h, w = shape
    s = spec.box_p
    n_corr = max(1, int(spec.p_corr * (h // s) * (w // s)))
    rng = np.random.default_rng(spec.seed)
    rows = rng.integers(0, h - s + 1, size=n_corr)
    cols = rng.integers(0, w - s + 1, size=n_corr)
    return np.stack([rows, cols], axis=1)


def _patch_terms(d_src, d_target, spec):
    """Yield (row, col, valid_mask, r, degenerate) for every usable patch, plus the skip count."""
    s = spec.box_p
    used = []
    skipped = 0
    for r0, c0 in sample_patches(d_src.shape, spec):
        ps = d_src[r0 : r0 + s, c0 : c0 + s]
        pt = d_target[r0 : r0 + s, c0 : c0 + s]
        valid = (ps > 0) & (pt > 0)
        if valid.sum() < max(2, MIN_VALID_FRACTION * s * s):
            skipped += 1
            continue
        r, degenerate = pcc(ps[valid], pt[valid], with_flag=True)
        used.append((r0, c0, valid, r, degenerate))
    return used, skipped


def local_pearson_loss(d_src, d_target, spec: PatchSpec | None = None, *, return_stats: bool = False):
    """Mean of ``1 - PCC`` over randomly drawn square patches.

    Pixels where either map is <= 0 (background) are left out of a patch;
    patches with fewer than a quarter valid pixels are skipped. A constant
    patch counts as PCC = 0, i.e. loss 1.
    """
    spec = spec or PatchSpec()
    d_src, d_target = _check_maps(d_src, d_target, spec)
    used, skipped = _patch_terms(d_src, d_target, spec)
    n_deg = sum(1 for *_, deg in used if deg)
    loss = float(np.mean([1.0 - r for *_, r, _ in used])) if used else 0.0
    if return_stats:
        return PatchLossResult(loss, len(used), skipped, n_deg)
    return loss


def local_pearson_loss_grad(d_src, d_target, spec: PatchSpec | None = None) -> np.ndarray:
    """Analytic gradient of :func:`local_pearson_loss` with respect to ``d_src``."""
    spec = spec or PatchSpec()
    d_src, d_target = _check_maps(d_src, d_target, spec)
    used, _ = _patch_terms(d_src, d_target, spec)
    grad = np.zeros_like(d_src)
    if not used:
        return grad
    s = spec.box_p
    n = len(used)
    for r0, c0, valid, r, degenerate in used:
        if degenerate:
            continue
        x = d_src[r0 : r0 + s, c0 : c0 + s][valid]
        y = d_target[r0 : r0 + s, c0 : c0 + s][valid]
        m = x.size
        xc = x - x.mean()
        yc = y - y.mean()
        sx = math.sqrt(np.mean(xc * xc))
        sy = math.sqrt(np.mean(yc * yc))
        d_r = (yc / (sx * sy) - r * xc / (sx * sx)) / m
        block = grad[r0 : r0 + s, c0 : c0 + s]
        block[valid] -= d_r / n
    return grad


PSNR_CAP = 100.0


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for images in [0, 1]; ``inf`` for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, *, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity with a Gaussian window, averaged over positions where the window fits."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < window:
        raise ValueError(f"images must be at least {window}x{window} for SSIM")
    g = _gaussian_window(window, sigma)
    c1, c2 = k1**2, k2**2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        vx = _filter_valid(x * x, g) - mx * mx
        vy = _filter_valid(y * y, g) - my * my
        cxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
