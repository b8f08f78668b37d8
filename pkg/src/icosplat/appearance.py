"""Cycle-consistency depth filtering and virtual-view supervision.

A rendered depth is trusted at a pixel when the round trip through enough
source views returns nearly the same depth (within a threshold scaled to
the scene's depth range).  Trusted pixels forward-splat training-image
colors into freshly sampled nearby virtual poses; the rendered image at
that pose is then supervised against the splatted target, which punishes
geometry that only looks right from the training viewpoints.

The synthesized target is a constant: gradients flow only through the
rendered virtual image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import CameraIntrinsics, CameraPose, Z_NEAR, pixel_grid, relative_transform
from .warp import backward_reproject, forward_warp_pixels, masked_l1, masked_l1_grad


def depth_error(
    depth_ref: np.ndarray,
    depth_src: np.ndarray,
    K: CameraIntrinsics,
    T_ref_to_src: CameraPose,
):
    """|D_ref - D_tilde| per pixel with the round-trip validity mask."""
    _, d_tilde, valid = backward_reproject(depth_ref, depth_src, K, T_ref_to_src)
    e = np.where(valid, np.abs(depth_ref - d_tilde), 0.0)
    return e, valid


@dataclass
class ReliabilityMask:
    """mask true where >= m source views agree; counts per pixel; the
    absolute depth threshold tau_d that was applied."""

    mask: np.ndarray
    counts: np.ndarray
    tau_d: float


def reliability_mask(
    errors: list[np.ndarray],
    valids: list[np.ndarray],
    depth_ref: np.ndarray,
    m: int,
    tau_factor: float = 0.01,
    alpha: np.ndarray | None = None,
) -> ReliabilityMask:
    """Vote depth reliability: e_j < tau_d for at least m views.

    tau_d = tau_factor * max(D_ref), the max over pixels with alpha >= 0.5
    when an alpha map is given (low-alpha depth is a blend artifact, not a
    scale reference).  An invalid round trip counts as inconsistent.
    """
    if alpha is not None:
        trusted = depth_ref[alpha >= 0.5]
        d_max = float(trusted.max()) if trusted.size else 0.0
    else:
        d_max = float(depth_ref.max()) if depth_ref.size else 0.0
    tau_d = tau_factor * d_max
    counts = np.zeros(depth_ref.shape, dtype=np.int64)
    for e, v in zip(errors, valids):
        counts += (v & (e < tau_d)).astype(np.int64)
    return ReliabilityMask(mask=counts >= m, counts=counts, tau_d=tau_d)


def default_m(n_views: int) -> int:
    """ceil((n-1)/2) agreeing views required."""
    return max(1, int(np.ceil((n_views - 1) / 2)))


def sample_virtual_pose(
    train_poses: list[CameraPose],
    r: float,
    rng: np.random.Generator,
    K: CameraIntrinsics,
    scene_center: np.ndarray,
    max_attempts: int = 32,
) -> CameraPose:
    """Uniform-ball perturbation of a random training camera center.

    The orientation is copied from the chosen anchor.  A candidate is kept
    when the scene center projects inside its image in front of the camera
    (a containment test for the full bounding sphere would reject every
    pose for scenes wider than the field of view); after max_attempts
    misses the radius halves.
    """
    center = np.asarray(scene_center, dtype=float)
    r_cur = float(r)
    while True:
        for _ in range(max_attempts):
            anchor = train_poses[int(rng.integers(len(train_poses)))]
            while True:
                off = rng.uniform(-r_cur, r_cur, 3)
                if off @ off <= r_cur * r_cur:
                    break
            eye = anchor.camera_center() + off
            pose = CameraPose(anchor.rotation, -anchor.rotation @ eye)
            cam = pose.rotation @ center + pose.translation
            if cam[2] > Z_NEAR:
                u = K.fx * cam[0] / cam[2] + K.cx
                v = K.fy * cam[1] / cam[2] + K.cy
                if 0 <= u <= K.width - 1 and 0 <= v <= K.height - 1:
                    return pose
        r_cur *= 0.5
        if r_cur < 1e-12:
            return train_poses[int(rng.integers(len(train_poses)))]


@dataclass
class VirtualView:
    """A splat-synthesized target image at a virtual pose.

    image is 0 outside mask; zbuf holds the winning candidate depth
    (infinity where nothing landed).
    """

    pose: CameraPose
    image: np.ndarray
    mask: np.ndarray
    zbuf: np.ndarray


def synthesize_virtual_view(
    images: list[np.ndarray],
    poses: list[CameraPose],
    depths: list[np.ndarray],
    masks: list[np.ndarray],
    P_v: CameraPose,
    K: CameraIntrinsics,
) -> VirtualView:
    """Forward-splat masked training pixels into the virtual pose.

    Per view (ascending index), pixels passing the view's mask are lifted
    with that view's depth, transformed into P_v and scattered to the
    nearest pixel under a z-test: strictly-closer-by-1e-6 wins, otherwise
    the earlier writer (lowest view index) survives.
    """
    H, W = K.height, K.width
    zbuf = np.full(W * H, np.inf)
    img = np.zeros((W * H, 3))
    for image, pose, depth, m in zip(images, poses, depths, masks):
        use = m & (depth > 0)
        if not use.any():
            continue
        T = relative_transform(pose, P_v)
        uv, z, valid = forward_warp_pixels(depth, K, T)
        use = use & valid
        if not use.any():
            continue
        _kernels.zscatter(
            np.ascontiguousarray(uv[..., 0][use]),
            np.ascontiguousarray(uv[..., 1][use]),
            np.ascontiguousarray(z[use]),
            np.ascontiguousarray(image[use]),
            W, H, zbuf, img,
        )
    mask = np.isfinite(zbuf).reshape(H, W)
    return VirtualView(
        pose=P_v,
        image=img.reshape(H, W, 3),
        mask=mask,
        zbuf=zbuf.reshape(H, W),
    )


def virtual_view_loss(
    target: np.ndarray,
    mask: np.ndarray,
    rendered_rgb: np.ndarray,
    return_grad: bool = False,
):
    """Mean channel-mean L1 between the clamped render and the target.

    Gradients flow only into rendered_rgb; values clamped outside [0,1]
    are gated (subgradient 1 on the closed interval).
    """
    clamped = np.clip(rendered_rgb, 0.0, 1.0)
    res = masked_l1(clamped, target, mask)
    if not return_grad:
        return res.value
    g = masked_l1_grad(clamped, target, mask)
    gate = (rendered_rgb >= 0.0) & (rendered_rgb <= 1.0)
    return res.value, np.where(gate, g, 0.0)
