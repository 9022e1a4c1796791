"""Hartigan's dip statistic.

The dip is the sup-norm distance between the empirical CDF of a sample and
the closest unimodal CDF. Implemented with the greatest-convex-minorant /
least-concave-majorant iteration of Hartigan & Hartigan (1985), AS 217.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MAX_DIP_SAMPLES = 50_000
MIN_DIP_SAMPLES = 4


@dataclass(frozen=True)
class DipResult:
    dip: float
    n: int


def _minorant_links(x: np.ndarray) -> np.ndarray:
    """mn[j]: predecessor of j on the convex minorant of the points (x[i], i)."""
    n = len(x)
    mn = np.zeros(n, dtype=np.int64)
    for j in range(1, n):
        mn[j] = j - 1
        while True:
            a = mn[j]
            b = mn[a]
            if a == 0 or (x[j] - x[a]) * (a - b) < (x[a] - x[b]) * (j - a):
                break
            mn[j] = b
    return mn


def _majorant_links(x: np.ndarray) -> np.ndarray:
    """mj[k]: successor of k on the concave majorant of the points (x[i], i)."""
    n = len(x)
    mj = np.zeros(n, dtype=np.int64)
    mj[n - 1] = n - 1
    for k in range(n - 2, -1, -1):
        mj[k] = k + 1
        while True:
            a = mj[k]
            b = mj[a]
            if a == n - 1 or (x[k] - x[a]) * (a - b) < (x[a] - x[b]) * (k - a):
                break
            mj[k] = b
    return mj


def _dip_sorted(x: np.ndarray) -> float:
    """Dip of sorted data, in units of 1/(2n) before the final scaling."""
    n = len(x)
    mn = _minorant_links(x)
    mj = _majorant_links(x)
    low, high = 0, n - 1
    # every empirical CDF is at least 1/(2n) from any continuous unimodal CDF
    dip = 1.0
    while True:
        gcm = [high]
        while gcm[-1] > low:
            gcm.append(mn[gcm[-1]])
        lcm = [low]
        while lcm[-1] < high:
            lcm.append(mj[lcm[-1]])
        n_gcm, n_lcm = len(gcm) - 1, len(lcm) - 1
        ig, ih = n_gcm, n_lcm
        ix, iv = n_gcm - 1, 1

        # largest distance between the two hulls over the current interval
        d = 0.0
        if n_gcm != 1 or n_lcm != 1:
            while True:
                gx, lv = gcm[ix], lcm[iv]
                if gx > lv:
                    gl = gcm[ix + 1]
                    dx = (lv - gl + 1) - (x[lv] - x[gl]) * (gx - gl) / (x[gx] - x[gl])
                    iv += 1
                    if dx >= d:
                        d, ig, ih = dx, ix + 1, iv - 1
                else:
                    ll = lcm[iv - 1]
                    dx = (x[gx] - x[ll]) * (lv - ll) / (x[lv] - x[ll]) - (gx - ll - 1)
                    ix -= 1
                    if dx >= d:
                        d, ig, ih = dx, ix + 1, iv
                ix = max(ix, 0)
                iv = min(iv, n_lcm)
                if gcm[ix] == lcm[iv]:
                    break
        if d < dip:
            break

        # departure from unimodality on the convex (left) side
        dip_l = 0.0
        for j in range(ig, n_gcm):
            jb, je = gcm[j + 1], gcm[j]
            best = 1.0
            if je - jb > 1 and x[je] != x[jb]:
                span = x[je] - x[jb]
                for jj in range(jb, je + 1):
                    # ratio of differences first: tiny spans would overflow a slope
                    best = max(best, (jj - jb + 1) - (je - jb) * ((x[jj] - x[jb]) / span))
            dip_l = max(dip_l, best)
        # ... and on the concave (right) side
        dip_u = 0.0
        for j in range(ih, n_lcm):
            jb, je = lcm[j], lcm[j + 1]
            best = 1.0
            if je - jb > 1 and x[je] != x[jb]:
                span = x[je] - x[jb]
                for jj in range(jb, je + 1):
                    best = max(best, (je - jb) * ((x[jj] - x[jb]) / span) - (jj - jb - 1))
            dip_u = max(dip_u, best)
        dip = max(dip, dip_l, dip_u)

        if low == gcm[ig] and high == lcm[ih]:
            break
        low, high = gcm[ig], lcm[ih]
    return dip


def dip_statistic(samples: Sequence[float] | np.ndarray) -> DipResult:
    """Hartigan's dip of ``samples`` (n >= 4, finite). The result lies in [1/(2n), 1/4]."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n < MIN_DIP_SAMPLES:
        raise ValueError(f"dip test needs at least {MIN_DIP_SAMPLES} samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("dip test samples must be finite")
    x = np.sort(x)
    if x[0] == x[-1]:
        # a single point mass is unimodal
        return DipResult(0.0, n)
    return DipResult(_dip_sorted(x) / (2.0 * n), n)


def positive_samples(delta: np.ndarray, cap: int = MAX_DIP_SAMPLES) -> np.ndarray:
    """Strictly positive entries of a relative-difference map, thinned by a uniform stride to at most ``cap``."""
    pos = np.asarray(delta, dtype=np.float64).ravel()
    pos = pos[pos > 0]
    if pos.size > cap:
        stride = -(-pos.size // cap)
        pos = pos[::stride]
    return pos


def view_dip(delta: np.ndarray) -> float | None:
    """Dip of the positive part of one view's relative-difference map, or None if too few values."""
    pos = positive_samples(delta)
    if pos.size < MIN_DIP_SAMPLES:
        return None
    return float(dip_statistic(pos).dip)


def average_dip(delta_maps: Sequence[np.ndarray]) -> float:
    """Mean dip over views; views with fewer than four positive entries are skipped."""
    if len(delta_maps) == 0:
        raise ValueError("average_dip needs at least one view")
    dips = []
    for i, delta in enumerate(delta_maps):
        d = view_dip(delta)
        if d is None:
            log.info("view %d skipped: fewer than %d positive relative differences", i, MIN_DIP_SAMPLES)
            continue
        dips.append(d)
    if not dips:
        raise ValueError("every view was skipped; no view has enough positive relative differences")
    return float(np.mean(dips))
