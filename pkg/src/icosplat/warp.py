"""Depth-driven warping between posed views.

A reference pixel p with depth D(p) backprojects to D(p) * K^-1 p, moves
through the relative transform T into the source frame and reprojects to
p'.  Because the backprojected point is linear in D, the warped location
has a closed-form derivative with respect to the reference depth, which is
how photometric losses differentiate into rendered depth maps.

Gradients flow through the reference depth only: source maps are sampled
as constants and validity masks are hard gates.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, Z_NEAR, bilinear_sample_map, pixel_grid


class WarpedMap(NamedTuple):
    """Warped values with their validity mask; values are 0 off-mask."""

    values: np.ndarray  # (H, W, C)
    mask: np.ndarray  # (H, W) bool


class MaskedL1(NamedTuple):
    value: float
    empty: bool


def _ray_dirs(K: CameraIntrinsics) -> np.ndarray:
    """(H, W, 3) camera-frame rays K^-1 p through pixel centers."""
    U, V = pixel_grid(K.width, K.height)
    return np.stack([(U - K.cx) / K.fx, (V - K.cy) / K.fy, np.ones_like(U)], axis=-1)


def forward_warp_pixels(
    depth_ref: np.ndarray,
    K: CameraIntrinsics,
    T: CameraPose,
    with_jacobian: bool = False,
):
    """Per-pixel warp p -> p' into the source view.

    Returns (uv (H,W,2), z (H,W), valid (H,W)) and, with with_jacobian,
    also (duv_dD (H,W,2), dz_dD (H,W)): derivatives w.r.t. the reference
    depth at the same pixel.  valid requires positive reference depth and
    the transformed point in front of the source camera.
    """
    H, W = depth_ref.shape
    if (W, H) != (K.width, K.height):
        raise ValueError(f"depth shape {depth_ref.shape} does not match {K.height}x{K.width}")
    a = _ray_dirs(K) @ T.rotation.T  # per-pixel direction in source frame
    t = T.translation
    D = depth_ref[..., None]
    X = D * a + t
    z = X[..., 2]
    valid = (depth_ref > 0) & (z > Z_NEAR) & np.isfinite(z)
    zs = np.where(valid, z, 1.0)
    uv = np.empty((H, W, 2))
    uv[..., 0] = K.fx * X[..., 0] / zs + K.cx
    uv[..., 1] = K.fy * X[..., 1] / zs + K.cy
    uv[~valid] = 0.0
    if not with_jacobian:
        return uv, z, valid
    # X = D*a + t is linear in D: d u'/dD = fx (a_x t_z - t_x a_z) / z^2
    duv = np.empty((H, W, 2))
    duv[..., 0] = K.fx * (a[..., 0] * t[2] - t[0] * a[..., 2]) / zs**2
    duv[..., 1] = K.fy * (a[..., 1] * t[2] - t[1] * a[..., 2]) / zs**2
    duv[~valid] = 0.0
    dz = np.where(valid, a[..., 2], 0.0)
    return uv, z, valid, duv, dz


def inverse_warp(
    source: np.ndarray,
    depth_ref: np.ndarray,
    K: CameraIntrinsics,
    T: CameraPose,
    with_grad: bool = False,
):
    """Reconstruct a reference-view map by sampling `source` at p'.

    Returns a WarpedMap; with with_grad, also d(values)/d(depth_ref) of
    shape (H, W, C), the chain of the bilinear sampling Jacobian with the
    warp's depth derivative.
    """
    if source.ndim == 2:
        source = source[..., None]
    if with_grad:
        uv, _, valid, duv, _ = forward_warp_pixels(depth_ref, K, T, with_jacobian=True)
    else:
        uv, _, valid = forward_warp_pixels(depth_ref, K, T)
    values, inb, jac = bilinear_sample_map(source, uv[..., 0], uv[..., 1])
    mask = valid & inb
    values = np.where(mask[..., None], values, 0.0)
    if not with_grad:
        return WarpedMap(values, mask)
    dvalues = np.einsum("hwcd,hwd->hwc", jac, duv)
    dvalues = np.where(mask[..., None], dvalues, 0.0)
    return WarpedMap(values, mask), dvalues


def backward_reproject(
    depth_ref: np.ndarray,
    depth_src: np.ndarray,
    K: CameraIntrinsics,
    T: CameraPose,
):
    """Round-trip p -> p' -> p'' using the source view's own depth.

    The source depth sampled at p' backprojects p', returns through T^-1,
    and reprojects in the reference camera.  Returns (p'' (H,W,2), the
    reference-frame depth of that point (H,W), valid (H,W)).  valid needs
    both warp legs in front of their cameras, the sample in bounds and the
    sampled depth positive.
    """
    H, W = depth_ref.shape
    uv, _, valid1 = forward_warp_pixels(depth_ref, K, T)
    ds, inb, _ = bilinear_sample_map(depth_src[..., None], uv[..., 0], uv[..., 1])
    ds = ds[..., 0]
    ok = valid1 & inb & (ds > 0)
    # backproject p' in the source camera, return to the reference frame
    dirs_src = np.empty((H, W, 3))
    dirs_src[..., 0] = (uv[..., 0] - K.cx) / K.fx
    dirs_src[..., 1] = (uv[..., 1] - K.cy) / K.fy
    dirs_src[..., 2] = 1.0
    X_src = ds[..., None] * dirs_src
    Tinv = T.inverse()
    X_ref = X_src @ Tinv.rotation.T + Tinv.translation
    z = X_ref[..., 2]
    ok = ok & (z > Z_NEAR)
    zs = np.where(ok, z, 1.0)
    pxy = np.empty((H, W, 2))
    pxy[..., 0] = K.fx * X_ref[..., 0] / zs + K.cx
    pxy[..., 1] = K.fy * X_ref[..., 1] / zs + K.cy
    pxy[~ok] = 0.0
    d_tilde = np.where(ok, z, 0.0)
    return pxy, d_tilde, ok


def masked_l1(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> MaskedL1:
    """Mean over masked pixels of the channel-mean absolute difference."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    n = int(mask.sum())
    if n == 0:
        return MaskedL1(0.0, True)
    per_pixel = np.abs(a - b).mean(axis=-1)
    return MaskedL1(float(per_pixel[mask].sum() / n), False)


def masked_l1_grad(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """d masked_l1 / d a, zero off-mask (sign subgradient at equality)."""
    squeeze = a.ndim == 2
    if squeeze:
        a = a[..., None]
        b = b[..., None]
    n = int(mask.sum())
    g = np.zeros_like(a)
    if n:
        C = a.shape[-1]
        g = np.sign(a - b) / (n * C) * mask[..., None]
    return g[..., 0] if squeeze else g
