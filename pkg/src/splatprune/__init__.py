"""Depth-disagreement floater pruning for 3D gaussian splat scenes.

The package renders alpha-blended and mode-selected depth from a gaussian
scene, measures how bimodal their relative difference is, and removes the
gaussians that sit in front of the dominant surface on the most suspicious
pixels.
"""

from splatprune.scene import Camera, Gaussian, Scene, activate, deactivate, make_toy_scene, toy_cameras
from splatprune.raster import RenderOptions, RenderOutput, project_gaussian, reference_render, render
from splatprune.modality import DipResult, average_dip, dip_statistic
from splatprune.metrics import PatchSpec, local_pearson_loss, local_pearson_loss_grad, pcc, psnr, ssim
from splatprune.pruner import FloaterReport, PruneConfig, prune_floaters
from splatprune.poses import PoseSampler, estimate_axis, rotate_pose, sample_novel_poses, up_vector

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "DipResult",
    "FloaterReport",
    "Gaussian",
    "PatchSpec",
    "PoseSampler",
    "PruneConfig",
    "RenderOptions",
    "RenderOutput",
    "Scene",
    "activate",
    "average_dip",
    "deactivate",
    "dip_statistic",
    "estimate_axis",
    "local_pearson_loss",
    "local_pearson_loss_grad",
    "make_toy_scene",
    "pcc",
    "project_gaussian",
    "prune_floaters",
    "psnr",
    "reference_render",
    "render",
    "rotate_pose",
    "sample_novel_poses",
    "ssim",
    "toy_cameras",
    "up_vector",
]
