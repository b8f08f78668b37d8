"""Differentiable Gaussian splatting with geometry-appearance consistency.

A small CPU trainer for 3D Gaussian scenes: an analytic-gradient splatting
renderer, multi-view warping with feature-based photometric regularization,
cycle-consistency depth filtering, virtual-view appearance supervision, and
a synthetic-scene harness with exact ground truth for end-to-end validation.
"""

from __future__ import annotations

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    GeometryError,
    Pixel,
    Z_NEAR,
    backproject,
    bilinear_sample,
    bilinear_sample_map,
    pixel_grid,
    project,
    projection_jacobian,
    relative_transform,
)
from .metrics import psnr, ssim

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "GeometryError",
    "Pixel",
    "Z_NEAR",
    "backproject",
    "bilinear_sample",
    "bilinear_sample_map",
    "pixel_grid",
    "project",
    "projection_jacobian",
    "psnr",
    "relative_transform",
    "ssim",
]

__version__ = "0.1.0"
