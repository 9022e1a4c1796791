"""CPU splatting renderer for colour, alpha-blended depth and mode-selected depth.

Gaussians are projected with the EWA approximation, globally sorted by
camera-space depth, binned into square tiles and composited front to back.
Besides the images, :class:`RenderOutput` keeps the per-pixel blending
records the floater pruner walks: the tile point list and, per pixel, the
point-list positions of the first contributing gaussian and of the gaussian
with the largest blending weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from splatprune.scene import SH_C0, Camera, Gaussian, Scene

NEAR_PLANE = 0.2
LOWPASS = 0.3
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4

SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


@dataclass(frozen=True)
class RenderOptions:
    tile_size: int = 16
    alpha_min: float = ALPHA_MIN
    t_min: float = T_MIN
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if int(self.tile_size) != self.tile_size or self.tile_size < 1:
            raise ValueError("tile_size must be a positive integer")
        if not 0.0 <= self.alpha_min < ALPHA_MAX:
            raise ValueError("alpha_min must lie in [0, 0.99)")
        if not 0.0 <= self.t_min < 1.0:
            raise ValueError("t_min must lie in [0, 1)")
        if len(self.background) != 3 or not all(0.0 <= c <= 1.0 for c in self.background):
            raise ValueError("background must be three values in [0, 1]")


@dataclass
class Projected2D:
    gaussian_id: int
    mean2d: np.ndarray
    conic: np.ndarray
    depth: float
    radius: float
    opacity: float


@dataclass
class Projection:
    """Screen-space data for every gaussian of a scene in one view (NaN rows are culled)."""

    means2d: np.ndarray  # (n, 2)
    conics: np.ndarray  # (n, 3)  a, b, c of the inverse 2D covariance
    cov2d: np.ndarray  # (n, 3)
    depths: np.ndarray  # (n,)
    radii: np.ndarray  # (n,)    3 * sqrt(largest eigenvalue)
    extents: np.ndarray  # (n, 2) half-width / half-height of the alpha >= alpha_min ellipse
    opacities: np.ndarray
    colors: np.ndarray  # (n, 3)
    visible: np.ndarray  # (n,) bool


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    d_alpha: np.ndarray  # (H, W)
    d_mode: np.ndarray  # (H, W)
    final_T: np.ndarray  # (H, W)
    point_list: np.ndarray  # gaussian ids, depth sorted inside each tile
    tile_ranges: np.ndarray  # (n_tiles, 2) [start, end) into point_list
    mode_range: np.ndarray  # (H, W, 2) (start_index, mode_index) into point_list, -1 if empty
    mode_weight: np.ndarray  # (H, W)
    means2d: np.ndarray
    conics: np.ndarray
    opacities: np.ndarray
    depths: np.ndarray
    tile_size: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.d_alpha.shape


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(w, x, y, z) unit quaternions, shape (n, 4) -> rotation matrices (n, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=1,
    )


def eval_sh(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Evaluate real SH colour, ``sh`` (n, K, 3), unit ``dirs`` (n, 3); returns clipped RGB."""
    k = sh.shape[1]
    result = SH_C0 * sh[:, 0]
    if k >= 4:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        result = result - SH_C1 * y * sh[:, 1] + SH_C1 * z * sh[:, 2] - SH_C1 * x * sh[:, 3]
        if k >= 9:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            result = (
                result
                + SH_C2[0] * xy * sh[:, 4]
                + SH_C2[1] * yz * sh[:, 5]
                + SH_C2[2] * (2.0 * zz - xx - yy) * sh[:, 6]
                + SH_C2[3] * xz * sh[:, 7]
                + SH_C2[4] * (xx - yy) * sh[:, 8]
            )
            if k >= 16:
                result = (
                    result
                    + SH_C3[0] * y * (3 * xx - yy) * sh[:, 9]
                    + SH_C3[1] * xy * z * sh[:, 10]
                    + SH_C3[2] * y * (4 * zz - xx - yy) * sh[:, 11]
                    + SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * sh[:, 12]
                    + SH_C3[4] * x * (4 * zz - xx - yy) * sh[:, 13]
                    + SH_C3[5] * z * (xx - yy) * sh[:, 14]
                    + SH_C3[6] * x * (xx - 3 * yy) * sh[:, 15]
                )
    return np.clip(result + 0.5, 0.0, 1.0)


def project(scene: Scene, cam: Camera, alpha_min: float = ALPHA_MIN) -> Projection:
    """Project every gaussian of ``scene`` into ``cam``.

    A gaussian is culled when its centre is within the near plane, when its
    opacity can never reach ``alpha_min``, or when the ellipse on which its
    alpha reaches ``alpha_min`` lies entirely off screen.
    """
    n = len(scene)
    w2c, t = cam.world_to_camera
    p_cam = scene.positions @ w2c.T + t
    tx, ty, tz = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    in_front = tz > NEAR_PLANE
    safe_z = np.where(in_front, tz, 1.0)

    rot = quat_to_rotmat(scene.rotations)
    m = rot * scene.scales[:, None, :]
    cov3d = m @ np.transpose(m, (0, 2, 1))

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / safe_z
    jac[:, 0, 2] = -cam.fx * tx / safe_z**2
    jac[:, 1, 1] = cam.fy / safe_z
    jac[:, 1, 2] = -cam.fy * ty / safe_z**2
    tmat = jac @ w2c
    cov = tmat @ cov3d @ np.transpose(tmat, (0, 2, 1))
    a = cov[:, 0, 0] + LOWPASS
    b = cov[:, 0, 1]
    c = cov[:, 1, 1] + LOWPASS
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = 3.0 * np.sqrt(lam_max)

    means2d = np.stack([cam.fx * tx / safe_z + cam.cx, cam.fy * ty / safe_z + cam.cy], axis=1)
    opac = scene.opacities
    with np.errstate(divide="ignore"):
        mahal_max = 2.0 * np.log(np.maximum(opac / alpha_min, 1e-300)) if alpha_min > 0 else np.full(n, np.inf)
    reachable = opac >= alpha_min
    mahal_max = np.maximum(mahal_max, 0.0)
    extents = np.stack([np.sqrt(mahal_max * a), np.sqrt(mahal_max * c)], axis=1) + 1.0
    on_screen = (
        (means2d[:, 0] + extents[:, 0] >= 0)
        & (means2d[:, 0] - extents[:, 0] <= cam.width)
        & (means2d[:, 1] + extents[:, 1] >= 0)
        & (means2d[:, 1] - extents[:, 1] <= cam.height)
    )
    visible = in_front & reachable & on_screen & (det > 0)

    dirs = scene.positions - cam.position
    dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    colors = eval_sh(scene.sh, dirs) if n else np.zeros((0, 3))

    hide = ~visible
    for arr in (means2d, conics, extents, colors):
        arr[hide] = np.nan
    radii = np.where(visible, radii, np.nan)
    depths = np.where(visible, tz, np.nan)
    cov2d = np.stack([a, b, c], axis=1)
    cov2d[hide] = np.nan
    return Projection(means2d, conics, cov2d, depths, radii, extents, opac.copy(), colors, visible)


def project_gaussian(g: Gaussian, cam: Camera, gaussian_id: int = 0) -> Projected2D | None:
    """Project a single gaussian; ``None`` means it was culled."""
    proj = project(Scene.from_gaussians([g]), cam)
    if not proj.visible[0]:
        return None
    return Projected2D(
        gaussian_id=gaussian_id,
        mean2d=proj.means2d[0].copy(),
        conic=proj.conics[0].copy(),
        depth=float(proj.depths[0]),
        radius=float(proj.radii[0]),
        opacity=float(proj.opacities[0]),
    )


def gaussian_alpha(means2d, conics, opacities, px, py) -> np.ndarray:
    """Alpha of gaussians at pixel (px, py), evaluated at the pixel centre, clamped to 0.99."""
    dx = px + 0.5 - means2d[..., 0]
    dy = py + 0.5 - means2d[..., 1]
    power = -0.5 * (conics[..., 0] * dx * dx + conics[..., 2] * dy * dy) - conics[..., 1] * dx * dy
    return np.minimum(ALPHA_MAX, opacities * np.exp(power))


def depth_order(proj: Projection) -> np.ndarray:
    """Visible gaussian ids sorted front to back (ties by id)."""
    ids = np.flatnonzero(proj.visible)
    return ids[np.argsort(proj.depths[ids], kind="stable")]


def _check_camera(cam: Camera):
    if cam.width < 1 or cam.height < 1:
        raise ValueError("zero-size image")


def _bin_tiles(proj: Projection, order: np.ndarray, cam: Camera, tile: int):
    tiles_x = math.ceil(cam.width / tile)
    tiles_y = math.ceil(cam.height / tile)
    if order.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((tiles_x * tiles_y, 2), dtype=np.int64)
    mx, my = proj.means2d[order, 0], proj.means2d[order, 1]
    ex, ey = proj.extents[order, 0], proj.extents[order, 1]
    x0 = np.clip(np.floor((mx - ex) / tile), 0, tiles_x - 1).astype(np.int64)
    x1 = np.clip(np.floor((mx + ex) / tile), 0, tiles_x - 1).astype(np.int64)
    y0 = np.clip(np.floor((my - ey) / tile), 0, tiles_y - 1).astype(np.int64)
    y1 = np.clip(np.floor((my + ey) / tile), 0, tiles_y - 1).astype(np.int64)
    nx = x1 - x0 + 1
    counts = nx * (y1 - y0 + 1)
    rank = np.repeat(np.arange(order.size), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_x = x0[rank] + local % nx[rank]
    tile_y = y0[rank] + local // nx[rank]
    tile_id = tile_y * tiles_x + tile_x
    # sort by tile, keep depth order inside each tile
    key = np.lexsort((rank, tile_id))
    point_list = order[rank[key]]
    sorted_tiles = tile_id[key]
    starts = np.searchsorted(sorted_tiles, np.arange(tiles_x * tiles_y), side="left")
    ends = np.searchsorted(sorted_tiles, np.arange(tiles_x * tiles_y), side="right")
    return point_list, np.stack([starts, ends], axis=1)


def render(scene: Scene, cam: Camera, opts: RenderOptions | None = None) -> RenderOutput:
    """Tiled front-to-back render of colour, d_alpha, d_mode and blending records."""
    opts = opts or RenderOptions()
    _check_camera(cam)
    h, w, tile = cam.height, cam.width, opts.tile_size
    proj = project(scene, cam, opts.alpha_min)
    order = depth_order(proj)
    point_list, tile_ranges = _bin_tiles(proj, order, cam, tile)
    bg = np.asarray(opts.background, dtype=np.float64)

    color = np.empty((h, w, 3))
    d_alpha = np.zeros((h, w))
    d_mode = np.zeros((h, w))
    final_t = np.ones((h, w))
    mode_range = np.full((h, w, 2), -1, dtype=np.int64)
    mode_weight = np.zeros((h, w))
    color[:] = bg

    tiles_x = math.ceil(w / tile)
    for tid, (start, end) in enumerate(tile_ranges):
        if start == end:
            continue
        ty0, tx0 = (tid // tiles_x) * tile, (tid % tiles_x) * tile
        ty1, tx1 = min(ty0 + tile, h), min(tx0 + tile, w)
        py, px = np.mgrid[ty0:ty1, tx0:tx1]
        px, py = px.ravel().astype(np.float64), py.ravel().astype(np.float64)
        ids = point_list[start:end]
        alpha = gaussian_alpha(
            proj.means2d[ids, None, :], proj.conics[ids, None, :], proj.opacities[ids, None], px[None], py[None]
        )
        alpha[alpha < opts.alpha_min] = 0.0
        t_after = np.cumprod(1.0 - alpha, axis=0)
        # compositing stops before the gaussian that would push T below t_min; T is monotone
        composited = t_after >= opts.t_min
        t_before = np.vstack([np.ones((1, alpha.shape[1])), t_after[:-1]])
        weights = np.where(composited, t_before * alpha, 0.0)
        t_final = np.where(composited, t_after, 1.0).min(axis=0)

        contributing = weights > 0
        has_any = contributing.any(axis=0)
        mode_local = np.argmax(weights, axis=0)
        first_local = np.argmax(contributing, axis=0)
        cols = np.arange(weights.shape[1])

        rgb = (weights[:, :, None] * proj.colors[ids, None, :]).sum(axis=0) + t_final[:, None] * bg
        da = (weights * proj.depths[ids, None]).sum(axis=0)
        dm = np.where(has_any, proj.depths[ids][mode_local], 0.0)
        shape = (ty1 - ty0, tx1 - tx0)
        color[ty0:ty1, tx0:tx1] = rgb.reshape(shape + (3,))
        d_alpha[ty0:ty1, tx0:tx1] = da.reshape(shape)
        d_mode[ty0:ty1, tx0:tx1] = dm.reshape(shape)
        final_t[ty0:ty1, tx0:tx1] = t_final.reshape(shape)
        mode_weight[ty0:ty1, tx0:tx1] = np.where(has_any, weights[mode_local, cols], 0.0).reshape(shape)
        rng = np.where(has_any[:, None], np.stack([first_local, mode_local], axis=1) + start, -1)
        mode_range[ty0:ty1, tx0:tx1] = rng.reshape(shape + (2,))

    return RenderOutput(
        color=color,
        d_alpha=d_alpha,
        d_mode=d_mode,
        final_T=final_t,
        point_list=point_list,
        tile_ranges=tile_ranges,
        mode_range=mode_range,
        mode_weight=mode_weight,
        means2d=proj.means2d,
        conics=proj.conics,
        opacities=proj.opacities,
        depths=proj.depths,
        tile_size=tile,
    )


def reference_render(scene: Scene, cam: Camera, opts: RenderOptions | None = None) -> RenderOutput:
    """Untiled oracle: every pixel walks the full global depth order one gaussian at a time.

    Cost is O(N * H * W); meant for small test scenes.
    """
    opts = opts or RenderOptions()
    _check_camera(cam)
    h, w = cam.height, cam.width
    proj = project(scene, cam, opts.alpha_min)
    order = depth_order(proj)
    py, px = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = np.asarray(opts.background, dtype=np.float64)

    T = np.ones((h, w))
    done = np.zeros((h, w), dtype=bool)
    rgb = np.zeros((h, w, 3))
    d_alpha = np.zeros((h, w))
    best_w = np.zeros((h, w))
    best_pos = np.full((h, w), -1, dtype=np.int64)
    first_pos = np.full((h, w), -1, dtype=np.int64)
    for pos, gid in enumerate(order):
        mean, conic, op = proj.means2d[gid], proj.conics[gid], proj.opacities[gid]
        dx = px + 0.5 - mean[0]
        dy = py + 0.5 - mean[1]
        power = -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy
        alpha = np.minimum(ALPHA_MAX, op * np.exp(power))
        live = ~done & (alpha >= opts.alpha_min)
        test_t = T * (1.0 - alpha)
        stop = live & (test_t < opts.t_min)
        done |= stop
        live &= ~stop
        wgt = np.where(live, T * alpha, 0.0)
        rgb += wgt[:, :, None] * proj.colors[gid]
        d_alpha += wgt * proj.depths[gid]
        T = np.where(live, test_t, T)
        first_pos = np.where(live & (first_pos < 0), pos, first_pos)
        better = live & (wgt > best_w)
        best_w = np.where(better, wgt, best_w)
        best_pos = np.where(better, pos, best_pos)

    has_any = best_pos >= 0
    d_mode = np.where(has_any, proj.depths[order][np.maximum(best_pos, 0)] if order.size else 0.0, 0.0)
    mode_range = np.stack([first_pos, best_pos], axis=-1)
    mode_range[~has_any] = -1
    return RenderOutput(
        color=rgb + T[:, :, None] * bg,
        d_alpha=d_alpha,
        d_mode=d_mode,
        final_T=T,
        point_list=order,
        tile_ranges=np.array([[0, order.size]], dtype=np.int64),
        mode_range=mode_range,
        mode_weight=best_w,
        means2d=proj.means2d,
        conics=proj.conics,
        opacities=proj.opacities,
        depths=proj.depths,
        tile_size=max(h, w),
    )


@dataclass
class BlendStep:
    gaussian_id: int
    depth: float
    T: float
    alpha: float
    weight: float


def blend_trace(scene: Scene, cam: Camera, px: int, py: int, opts: RenderOptions | None = None) -> list[BlendStep]:
    """Scalar walk of one pixel's compositing sequence (only composited gaussians are listed)."""
    opts = opts or RenderOptions()
    proj = project(scene, cam, opts.alpha_min)
    steps = []
    T = 1.0
    for gid in depth_order(proj):
        alpha = float(gaussian_alpha(proj.means2d[gid], proj.conics[gid], proj.opacities[gid], px, py))
        if alpha < opts.alpha_min:
            continue
        test_t = T * (1.0 - alpha)
        if test_t < opts.t_min:
            break
        steps.append(BlendStep(int(gid), float(proj.depths[gid]), T, alpha, T * alpha))
        T = test_t
    return steps
