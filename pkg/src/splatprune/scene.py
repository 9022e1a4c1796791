"""Gaussians, scenes, cameras and the synthetic fixtures used by the tests.

A :class:`Scene` keeps two views of the same gaussians. ``raw`` is the
float32 structured array exactly as it lives in a 3DGS ``.ply`` file
(logit opacity, log scale, unnormalised quaternion), so files round-trip
bit for bit. The activated float64 arrays (``positions``, ``opacities`` ...)
are what the renderer and pruner read.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

SH_C0 = 0.28209479177387814

# Coefficients per channel for SH degrees 0..3.
SH_COEFFS_PER_DEGREE = (1, 4, 9, 16)

TAG_SURFACE = 0
TAG_FLOATER = 1


def sh_degree_for(n_coeffs: int) -> int:
    """Lowest SH degree whose coefficient set holds ``n_coeffs`` coefficients per channel."""
    for d, k in enumerate(SH_COEFFS_PER_DEGREE):
        if n_coeffs <= k:
            return d
    raise ValueError(f"too many SH coefficients per channel: {n_coeffs}")


def _pad_sh(sh: np.ndarray) -> np.ndarray:
    """Zero-fill missing higher-order coefficients up to a complete degree (axis -2)."""
    k_full = SH_COEFFS_PER_DEGREE[sh_degree_for(sh.shape[-2])]
    pad = [(0, 0)] * sh.ndim
    pad[-2] = (0, k_full - sh.shape[-2])
    return np.pad(sh, pad)


def _as_sh(sh, n: int) -> np.ndarray:
    sh = np.asarray(sh, dtype=np.float64)
    if sh.ndim == 3 and sh.shape[0] == n and sh.shape[2] == 3:
        return sh
    if n == 0:
        return np.zeros((0, 1, 3))
    return sh.reshape(n, -1, 3)


def raw_dtype(n_rest: int) -> np.dtype:
    """Structured dtype of one stored gaussian with ``n_rest`` f_rest properties."""
    if n_rest % 3 or not 0 <= n_rest <= 45:
        raise ValueError(f"f_rest count must be a multiple of 3 in [0, 45], got {n_rest}")
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return np.dtype([(name, "<f4") for name in names])


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    return np.log(p) - np.log1p(-p)


@dataclass
class Gaussian:
    """One activated gaussian.

    ``rotation`` is a unit quaternion in (w, x, y, z) order, ``scale`` holds
    per-axis standard deviations and ``sh`` has shape ``(K, 3)`` with K in
    {1, 4, 9, 16}.
    """

    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    sh: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(-1, 3)
        self.opacity = float(self.opacity)
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must have unit norm")
        if np.any(self.scale <= 0):
            raise ValueError("scale components must be positive")
        if not 0.0 < self.opacity < 1.0:
            raise ValueError("opacity must lie in (0, 1)")
        if self.sh.shape[0] not in SH_COEFFS_PER_DEGREE:
            raise ValueError(f"unsupported SH coefficient count {self.sh.shape[0]}")


def activate(raw: Mapping[str, float] | np.void) -> Gaussian:
    """Turn one stored record (logit opacity, log scale, raw quaternion) into a :class:`Gaussian`."""
    names = raw.dtype.names if isinstance(raw, np.void) else tuple(raw.keys())
    values = {name: float(raw[name]) for name in names}
    if not all(math.isfinite(v) for v in values.values()):
        raise ValueError("raw gaussian contains non-finite values")
    n_rest = sum(1 for name in names if name.startswith("f_rest_"))
    quat = np.array([values[f"rot_{i}"] for i in range(4)])
    norm = np.linalg.norm(quat)
    if norm == 0.0:
        raise ValueError("zero quaternion cannot be normalised")
    sh = np.zeros((1 + n_rest // 3, 3))
    sh[0] = [values[f"f_dc_{c}"] for c in range(3)]
    per_channel = n_rest // 3
    for c in range(3):
        for k in range(per_channel):
            sh[1 + k, c] = values[f"f_rest_{c * per_channel + k}"]
    return Gaussian(
        position=[values["x"], values["y"], values["z"]],
        rotation=quat / norm,
        scale=np.exp([values[f"scale_{i}"] for i in range(3)]),
        opacity=_sigmoid(values["opacity"]),
        sh=_pad_sh(sh),
    )


def deactivate(g: Gaussian) -> dict[str, float]:
    """Inverse of :func:`activate` in float64 (normals are written as zero)."""
    out = {"x": g.position[0], "y": g.position[1], "z": g.position[2], "nx": 0.0, "ny": 0.0, "nz": 0.0}
    for c in range(3):
        out[f"f_dc_{c}"] = g.sh[0, c]
    rest = g.sh[1:]
    per_channel = rest.shape[0]
    for c in range(3):
        for k in range(per_channel):
            out[f"f_rest_{c * per_channel + k}"] = rest[k, c]
    out["opacity"] = float(_logit(g.opacity))
    for i in range(3):
        out[f"scale_{i}"] = float(np.log(g.scale[i]))
    for i in range(4):
        out[f"rot_{i}"] = g.rotation[i]
    return {k: float(v) for k, v in out.items()}


class Scene:
    """Ordered gaussians backed by a raw structured array plus activated float64 copies.

    Gaussian ids are the dense row indices ``0..len-1``. :meth:`remove`
    keeps survivors in their original order.
    """

    def __init__(
        self,
        raw: np.ndarray,
        *,
        activated: Mapping[str, np.ndarray] | None = None,
        tags: np.ndarray | None = None,
        source_path: str | None = None,
        ply_header: Sequence[str] | None = None,
    ):
        if raw.dtype.names is None:
            raise TypeError("raw must be a structured array")
        self.raw = raw
        self.source_path = source_path
        # header lines of the file this scene was read from, re-emitted on write
        self.ply_header = list(ply_header) if ply_header is not None else None
        n = len(raw)
        self.tags = np.full(n, TAG_SURFACE, dtype=np.int8) if tags is None else np.asarray(tags, dtype=np.int8)
        if len(self.tags) != n:
            raise ValueError("tags length does not match gaussian count")
        if activated is None:
            activated = self._activate_raw(raw)
        self.positions = np.asarray(activated["positions"], dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(activated["rotations"], dtype=np.float64).reshape(n, 4)
        self.scales = np.asarray(activated["scales"], dtype=np.float64).reshape(n, 3)
        self.opacities = np.asarray(activated["opacities"], dtype=np.float64).reshape(n)
        self.sh = _as_sh(activated["sh"], n)

    @staticmethod
    def _activate_raw(raw: np.ndarray) -> dict[str, np.ndarray]:
        names = raw.dtype.names
        for name in names:
            if not np.all(np.isfinite(raw[name])):
                raise ValueError(f"property {name!r} contains non-finite values")
        n = len(raw)
        n_rest = sum(1 for name in names if name.startswith("f_rest_"))
        per_channel = n_rest // 3
        quats = np.stack([raw[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)
        norms = np.linalg.norm(quats, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero quaternion cannot be normalised")
        sh = np.zeros((n, 1 + per_channel, 3))
        for c in range(3):
            sh[:, 0, c] = raw[f"f_dc_{c}"]
            for k in range(per_channel):
                sh[:, 1 + k, c] = raw[f"f_rest_{c * per_channel + k}"]
        return {
            "positions": np.stack([raw["x"], raw["y"], raw["z"]], axis=1).astype(np.float64),
            "rotations": quats / norms,
            "scales": np.exp(np.stack([raw[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float64)),
            "opacities": _sigmoid(raw["opacity"].astype(np.float64)),
            "sh": _pad_sh(sh),
        }

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "Scene":
        k = SH_COEFFS_PER_DEGREE[sh_degree]
        return cls(np.zeros(0, dtype=raw_dtype(3 * (k - 1))))

    @classmethod
    def from_arrays(
        cls,
        positions,
        rotations,
        scales,
        opacities,
        sh,
        *,
        tags=None,
        source_path: str | None = None,
    ) -> "Scene":
        """Build a scene from activated values; the raw float32 form is derived from them."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        rotations = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        rotations = rotations / np.linalg.norm(rotations, axis=1, keepdims=True)
        scales = np.asarray(scales, dtype=np.float64).reshape(n, 3)
        opacities = np.asarray(opacities, dtype=np.float64).reshape(n)
        sh = _as_sh(sh, n)
        if np.any(scales <= 0):
            raise ValueError("scale components must be positive")
        if np.any((opacities <= 0) | (opacities >= 1)):
            raise ValueError("opacity must lie in (0, 1)")
        k = sh.shape[1]
        if k not in SH_COEFFS_PER_DEGREE:
            raise ValueError(f"unsupported SH coefficient count {k}")
        raw = np.zeros(n, dtype=raw_dtype(3 * (k - 1)))
        for i, axis in enumerate("xyz"):
            raw[axis] = positions[:, i]
        for c in range(3):
            raw[f"f_dc_{c}"] = sh[:, 0, c]
            for j in range(k - 1):
                raw[f"f_rest_{c * (k - 1) + j}"] = sh[:, 1 + j, c]
        raw["opacity"] = _logit(opacities)
        for i in range(3):
            raw[f"scale_{i}"] = np.log(scales[:, i])
        for i in range(4):
            raw[f"rot_{i}"] = rotations[:, i]
        activated = {"positions": positions, "rotations": rotations, "scales": scales, "opacities": opacities, "sh": sh}
        return cls(raw, activated=activated, tags=tags, source_path=source_path)

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian], **kwargs) -> "Scene":
        gs = list(gaussians)
        if not gs:
            return cls.empty()
        k = max(g.sh.shape[0] for g in gs)
        sh = np.zeros((len(gs), k, 3))
        for i, g in enumerate(gs):
            sh[i, : g.sh.shape[0]] = g.sh
        return cls.from_arrays(
            [g.position for g in gs],
            [g.rotation for g in gs],
            [g.scale for g in gs],
            [g.opacity for g in gs],
            sh,
            **kwargs,
        )

    def __len__(self) -> int:
        return len(self.raw)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.positions[i], self.rotations[i], self.scales[i], self.opacities[i], self.sh[i])

    def __iter__(self) -> Iterator[Gaussian]:
        for i in range(len(self)):
            yield self[i]

    @property
    def sh_degree(self) -> int:
        return sh_degree_for(self.sh.shape[1])

    def copy(self) -> "Scene":
        return Scene(
            self.raw.copy(),
            activated={
                "positions": self.positions.copy(),
                "rotations": self.rotations.copy(),
                "scales": self.scales.copy(),
                "opacities": self.opacities.copy(),
                "sh": self.sh.copy(),
            },
            tags=self.tags.copy(),
            source_path=self.source_path,
            ply_header=self.ply_header,
        )

    def remove(self, ids) -> np.ndarray:
        """Delete gaussians by id, in place. Returns the old ids of the survivors."""
        drop = np.zeros(len(self), dtype=bool)
        ids = np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self)):
            raise IndexError("gaussian id out of range")
        drop[ids] = True
        keep = ~drop
        self.raw = self.raw[keep]
        self.tags = self.tags[keep]
        self.positions = self.positions[keep]
        self.rotations = self.rotations[keep]
        self.scales = self.scales[keep]
        self.opacities = self.opacities[keep]
        self.sh = self.sh[keep]
        return np.flatnonzero(keep)


@dataclass
class Camera:
    """Pinhole camera. ``rotation`` is camera-to-world; camera looks down +z, y points down."""

    id: int
    image_name: str
    width: int
    height: int
    fx: float
    fy: float
    rotation: np.ndarray
    position: np.ndarray
    cx: float | None = field(default=None)
    cy: float | None = field(default=None)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if self.width <= 0 or self.height <= 0 or self.fx <= 0 or self.fy <= 0:
            raise ValueError("width, height, fx and fy must be positive")
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-5:
            raise ValueError("camera rotation is not orthonormal")
        if self.cx is None:
            self.cx = self.width / 2.0
        if self.cy is None:
            self.cy = self.height / 2.0

    @property
    def world_to_camera(self) -> tuple[np.ndarray, np.ndarray]:
        """(W, t) such that x_cam = W @ x_world + t."""
        w = self.rotation.T
        return w, -w @ self.position

    def replace(self, **changes) -> "Camera":
        fields = dict(
            id=self.id,
            image_name=self.image_name,
            width=self.width,
            height=self.height,
            fx=self.fx,
            fy=self.fy,
            rotation=self.rotation.copy(),
            position=self.position.copy(),
            cx=self.cx,
            cy=self.cy,
        )
        fields.update(changes)
        return Camera(**fields)


def look_at(position, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation for a camera at ``position`` facing ``target`` (+z forward, y down)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


# ---------------------------------------------------------------------------
# synthetic fixtures

TOY_SCENES = ("plane", "plane+floater", "ray4")


def _check_count(name: str, value: int):
    if int(value) != value or value <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")


def toy_cameras(name: str, *, n_views: int = 3, size: int = 64) -> list[Camera]:
    """Cameras matching :func:`make_toy_scene` fixtures.

    ``ray4`` uses one 33x33 camera at the origin so the centre pixel's ray is
    the optical axis. The plane fixtures use ``n_views`` forward-facing
    cameras on a short horizontal baseline, as in a sparse hand-held capture.
    """
    if name not in TOY_SCENES:
        raise ValueError(f"unknown toy scene {name!r}; expected one of {TOY_SCENES}")
    if name == "ray4":
        return [Camera(0, "ray4", 33, 33, 40.0, 40.0, np.eye(3), np.zeros(3))]
    _check_count("n_views", n_views)
    _check_count("size", size)
    offsets = np.linspace(-0.05, 0.05, n_views) if n_views > 1 else np.zeros(1)
    return [
        Camera(i, f"view_{i:03d}", size, size, float(size), float(size), np.eye(3), np.array([dx, 0.0, 0.0]))
        for i, dx in enumerate(offsets)
    ]


def make_toy_scene(
    name: str,
    *,
    seed: int = 0,
    depth: float = 4.0,
    spacing: float = 0.08,
    extent: float = 2.6,
    n_floaters: int = 24,
    depths: Sequence[float] = (1.0, 1.5, 5.0, 6.0),
    opacities: Sequence[float] = (0.2, 0.5, 0.2, 0.3),
) -> Scene:
    """Deterministic synthetic scenes.

    ``plane``
        a textured, opaque surface patch at ``depth`` made of three thin
        layers of flattened gaussians on jittered grids.
    ``plane+floater``
        the same patch plus ``n_floaters`` high-opacity gaussians packed in a
        small blob close to the cameras. Floater rows carry ``TAG_FLOATER``
        in ``scene.tags``.
    ``ray4``
        gaussians on the optical axis of the ``ray4`` camera at the given
        depths and opacities, small enough that the centre pixel blends
        exactly these, in order, with alpha equal to the opacity.
    """
    if name not in TOY_SCENES:
        raise ValueError(f"unknown toy scene {name!r}; expected one of {TOY_SCENES}")
    rng = np.random.default_rng(seed)
    if name == "ray4":
        depths = np.asarray(depths, dtype=np.float64)
        ops = np.asarray(opacities, dtype=np.float64)
        if depths.size == 0 or depths.size != ops.size:
            raise ValueError("ray4 needs equally many (>0) depths and opacities")
        if np.any(np.diff(depths) <= 0):
            raise ValueError("ray4 depths must be strictly increasing")
        n = depths.size
        positions = np.zeros((n, 3))
        positions[:, 2] = depths
        scales = np.repeat((0.02 * depths)[:, None], 3, axis=1)
        sh = np.zeros((n, 1, 3))
        sh[:, 0] = (rng.uniform(0.1, 0.9, size=(n, 3)) - 0.5) / SH_C0
        rots = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        return Scene.from_arrays(positions, rots, scales, ops, sh)

    if spacing <= 0 or extent <= 0 or depth <= 0:
        raise ValueError("spacing, extent and depth must be positive")
    positions, rots, scales, ops, sh = _surface_patch(rng, depth, spacing, extent)
    tags = np.full(len(positions), TAG_SURFACE, dtype=np.int8)
    if name == "plane+floater":
        _check_count("n_floaters", n_floaters)
        fp, fr, fs, fo, fsh = _floater_blob(rng, n_floaters)
        positions = np.concatenate([positions, fp])
        rots = np.concatenate([rots, fr])
        scales = np.concatenate([scales, fs])
        ops = np.concatenate([ops, fo])
        sh = np.concatenate([sh, fsh])
        tags = np.concatenate([tags, np.full(n_floaters, TAG_FLOATER, dtype=np.int8)])
    return Scene.from_arrays(positions, rots, scales, ops, sh, tags=tags)


# (depth offset, opacity, in-plane scale as a fraction of the grid spacing)
# A crisp textured skin, a softer undercoat and an opaque backing sheet. The
# backing soaks up leftover transmittance so that on a clean surface the
# blended depth never sits in front of the mode.
SURFACE_LAYERS = ((0.0, 0.85, 0.3), (0.1, 0.6, 0.5), (0.6, 0.95, 0.75))


def _surface_patch(rng, depth, spacing, extent):
    ticks = np.arange(-extent, extent + 1e-9, spacing)
    gx, gy = np.meshgrid(ticks, ticks, indexing="xy")
    layers = []
    for layer, (dz, opacity, rel_scale) in enumerate(SURFACE_LAYERS):
        xy = np.stack([gx.ravel(), gy.ravel()], axis=1)
        xy = xy + rng.uniform(-0.2, 0.2, size=xy.shape) * spacing + 0.5 * spacing * layer
        z = np.full(len(xy), depth + dz)
        pos = np.column_stack([xy, z])
        n = len(pos)
        scale = np.column_stack([
            np.full(n, rel_scale * spacing),
            np.full(n, rel_scale * spacing),
            np.full(n, 0.05 * spacing),
        ])
        op = np.full(n, opacity)
        # low-frequency texture so colour images are not flat
        base = 0.5 + 0.35 * np.sin(np.column_stack([1.3 * pos[:, 0], 1.7 * pos[:, 1], 1.1 * (pos[:, 0] + pos[:, 1])]))
        col = (base - 0.5) / SH_C0
        layers.append((pos, np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)), scale, op, col[:, None, :]))
    return tuple(np.concatenate([layer[i] for layer in layers]) for i in range(5))


def _floater_blob(rng, n):
    center = np.array([0.15, -0.1, 1.3])
    pos = center + rng.normal(scale=0.012, size=(n, 3))
    scale = rng.uniform(0.02, 0.035, size=(n, 3))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    op = rng.uniform(0.85, 0.99, size=n)
    col = (rng.uniform(0.6, 0.95, size=(n, 3)) - 0.5) / SH_C0
    return pos, q, scale, op, col[:, None, :]
