"""Novel camera poses made by swinging training cameras about the mean camera axis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from splatprune.scene import Camera


def up_vector(cam: Camera, column: int = 0) -> np.ndarray:
    """Column of the camera-to-world rotation used as the camera's up direction.

    Defaults to the first column; pass ``column=1`` for the usual y-down
    camera convention.
    """
    if column not in (0, 1, 2):
        raise ValueError("column must be 0, 1 or 2")
    return cam.rotation[:, column].copy()


def estimate_axis(cameras: Sequence[Camera], column: int = 0) -> np.ndarray:
    """Normalised mean of the cameras' up vectors."""
    if not cameras:
        raise ValueError("estimate_axis needs at least one camera")
    mean = np.mean([up_vector(c, column) for c in cameras], axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-6:
        raise ValueError("camera up vectors cancel out; cannot estimate a scene axis")
    return mean / norm


def axis_angle_matrix(axis: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rodrigues rotation matrix for a right-handed turn of ``theta_deg`` about unit ``axis``."""
    k = np.asarray(axis, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(k) - 1.0) > 1e-6:
        raise ValueError("rotation axis must be a unit vector")
    th = math.radians(theta_deg)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return math.cos(th) * np.eye(3) + math.sin(th) * kx + (1.0 - math.cos(th)) * np.outer(k, k)


def rotate_pose(cam: Camera, axis, theta: float, center=(0.0, 0.0, 0.0)) -> Camera:
    """Rotate the camera centre about the line through ``center`` along ``axis``.

    The orientation is turned by the same rotation, so a camera facing the
    centre keeps facing it. Intrinsics are untouched.
    """
    rot = axis_angle_matrix(axis, theta)
    c = np.asarray(center, dtype=np.float64)
    position = c + rot @ (cam.position - c)
    return cam.replace(position=position, rotation=rot @ cam.rotation)


@dataclass(frozen=True)
class PoseSampler:
    y_bar: tuple[float, float, float]
    theta_range: tuple[float, float] = (-10.0, 10.0)
    seed: int = 0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if abs(np.linalg.norm(self.y_bar) - 1.0) > 1e-9:
            raise ValueError("y_bar must be a unit vector")
        lo, hi = self.theta_range
        if lo > hi:
            raise ValueError("theta_range must be (min, max) with min <= max")

    def thetas(self, k: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        lo, hi = self.theta_range
        return rng.uniform(lo, hi, size=k) if hi > lo else np.full(k, float(lo))


def sample_novel_poses(cameras: Sequence[Camera], sampler: PoseSampler, k: int) -> list[Camera]:
    """``k`` cameras; the i-th is training camera ``i % len(cameras)`` rotated by a random angle."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not cameras:
        raise ValueError("need at least one training camera")
    out = []
    for i, theta in enumerate(sampler.thetas(k)):
        src = cameras[i % len(cameras)]
        cam = rotate_pose(src, sampler.y_bar, float(theta), sampler.center)
        out.append(cam.replace(id=i, image_name=f"{src.image_name}_novel_{i:03d}"))
    return out
