"""Differentiable CPU splatting of anisotropic 3D Gaussians.

Forward: transform means to the camera frame, cull behind z_near, project
world covariances R_q diag(s^2) R_q^T through the local affine Jacobian of
the pinhole projection to 2x2 screen covariances, then composite
front-to-back per pixel (black background, 3 sigma truncation, opacity
clamped to 0.999, transmittance cutoff 1e-4).  Depth is the raw
alpha-blended expected camera z, not divided by alpha, so depth is exactly
0 wherever alpha is 0.

Backward: hand-derived gradients.  The compositing kernel produces
gradients w.r.t. 2D splat quantities (screen mean, conic, color, opacity,
camera z); this module chains them through the projection, the covariance
construction and the spherical harmonics back to the cloud parameters.
Quaternions need not be unit length: they are normalized inside the
renderer and the normalization Jacobian is part of the backward pass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import CameraIntrinsics, CameraPose, Z_NEAR

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199

OPACITY_MAX = 0.999
DET_MIN = 1e-12
LOG_SCALE_MIN = np.log(1e-6)
LOG_SCALE_MAX = np.log(1e3)

_CHECKPOINT_MAGIC = b"ICOGS01\x00"


# ---------------------------------------------------------------------------
# Cloud
# ---------------------------------------------------------------------------

@dataclass
class GaussianCloud:
    """Parameter arrays for N Gaussians.

    positions (N,3); quaternions (N,4) wxyz, kept unit-length by the
    optimizer; log_scales (N,3); opacity_logits (N,); sh (N,3,4) with
    coefficient 0 the view-independent band and 1..3 the linear band.
    """

    positions: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.quaternions = np.ascontiguousarray(self.quaternions, dtype=np.float64)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64)
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64)
        n = self.positions.shape[0]
        shapes = {
            "positions": (n, 3),
            "quaternions": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
            "sh": (n, 3, 4),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> GaussianCloud:
        return GaussianCloud(
            positions=self.positions.copy(),
            quaternions=self.quaternions.copy(),
            log_scales=self.log_scales.copy(),
            opacity_logits=self.opacity_logits.copy(),
            sh=self.sh.copy(),
        )

    @staticmethod
    def empty() -> GaussianCloud:
        return GaussianCloud(
            positions=np.zeros((0, 3)),
            quaternions=np.zeros((0, 4)),
            log_scales=np.zeros((0, 3)),
            opacity_logits=np.zeros(0),
            sh=np.zeros((0, 3, 4)),
        )


@dataclass
class CloudGradients:
    """Per-parameter gradient arrays mirroring a GaussianCloud."""

    positions: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    @staticmethod
    def zeros_for(cloud: GaussianCloud) -> CloudGradients:
        return CloudGradients(
            positions=np.zeros_like(cloud.positions),
            quaternions=np.zeros_like(cloud.quaternions),
            log_scales=np.zeros_like(cloud.log_scales),
            opacity_logits=np.zeros_like(cloud.opacity_logits),
            sh=np.zeros_like(cloud.sh),
        )

    def add_(self, other: CloudGradients, scale: float = 1.0) -> CloudGradients:
        self.positions += scale * other.positions
        self.quaternions += scale * other.quaternions
        self.log_scales += scale * other.log_scales
        self.opacity_logits += scale * other.opacity_logits
        self.sh += scale * other.sh
        return self


@dataclass
class RenderStats:
    n_gaussians: int = 0
    n_culled: int = 0
    n_degenerate: int = 0
    n_offscreen: int = 0
    n_pairs: int = 0


@dataclass
class RenderOutput:
    """rgb (H,W,3) raw composite (clamped to [0,1] only at loss time),
    depth (H,W) raw alpha-blended camera z, alpha (H,W) in [0,1]."""

    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    stats: RenderStats = field(default_factory=RenderStats)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def covariance_3d(log_scale: np.ndarray, q: np.ndarray) -> np.ndarray:
    """World covariance R diag(exp(2*log_scale)) R^T of one Gaussian."""
    qn = np.asarray(q, dtype=float)
    qn = qn / np.linalg.norm(qn)
    R = _quat_to_rot(qn[None, :])[0]
    D = np.exp(2.0 * np.asarray(log_scale, dtype=float))
    return (R * D) @ R.T


def _quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (M,3,3) from unit quaternions (M,4) wxyz."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _rot_backward(G: np.ndarray, q: np.ndarray) -> np.ndarray:
    """d(sum G*R)/d q_hat for unit quaternions q (M,4), G (M,3,3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    dw = 2 * (
        -z * G[:, 0, 1] + y * G[:, 0, 2]
        + z * G[:, 1, 0] - x * G[:, 1, 2]
        - y * G[:, 2, 0] + x * G[:, 2, 1]
    )
    dx = 2 * (
        y * G[:, 0, 1] + z * G[:, 0, 2]
        + y * G[:, 1, 0] - 2 * x * G[:, 1, 1] - w * G[:, 1, 2]
        + z * G[:, 2, 0] + w * G[:, 2, 1] - 2 * x * G[:, 2, 2]
    )
    dy = 2 * (
        -2 * y * G[:, 0, 0] + x * G[:, 0, 1] + w * G[:, 0, 2]
        + x * G[:, 1, 0] + z * G[:, 1, 2]
        - w * G[:, 2, 0] + z * G[:, 2, 1] - 2 * y * G[:, 2, 2]
    )
    dz = 2 * (
        -2 * z * G[:, 0, 0] - w * G[:, 0, 1] + x * G[:, 0, 2]
        + w * G[:, 1, 0] - 2 * z * G[:, 1, 1] + y * G[:, 1, 2]
        + x * G[:, 2, 0] + y * G[:, 2, 1]
    )
    return np.stack([dw, dx, dy, dz], axis=1)


def sh_colors(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Degree-1 SH evaluation: colors (M,3) from sh (M,3,4), unit dirs (M,3)."""
    dx, dy, dz = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    return (
        SH_C0 * sh[:, :, 0]
        - SH_C1 * dy * sh[:, :, 1]
        + SH_C1 * dz * sh[:, :, 2]
        - SH_C1 * dx * sh[:, :, 3]
        + 0.5
    )


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

@dataclass
class _RenderContext:
    """Everything the backward pass needs from a forward pass."""

    K: CameraIntrinsics
    pose: CameraPose
    sel: np.ndarray  # original cloud indices of active gaussians, depth order
    t_cam: np.ndarray  # (M,3)
    mean2d: np.ndarray
    conic: np.ndarray  # (M,3) inverse-covariance entries a,b,c
    sigma2: np.ndarray  # (M,3) screen covariance entries
    z: np.ndarray
    color: np.ndarray
    alpha: np.ndarray
    alpha_raw: np.ndarray  # sigmoid before the 0.999 clamp
    Rq: np.ndarray  # (M,3,3)
    Dvec: np.ndarray  # (M,3) exp(2 log_scale)
    Mmat: np.ndarray  # (M,2,3) J @ R
    Sigma_w: np.ndarray  # (M,3,3)
    dirs: np.ndarray  # (M,3) unit view directions
    vnorm: np.ndarray  # (M,)
    q_hat: np.ndarray
    q_norm: np.ndarray
    offsets: np.ndarray
    pair_gauss: np.ndarray
    n_proc: np.ndarray
    stats: RenderStats


def _prepare(cloud: GaussianCloud, K: CameraIntrinsics, pose: CameraPose) -> _RenderContext:
    stats = RenderStats(n_gaussians=cloud.n)
    W, H = K.width, K.height
    R = pose.rotation
    t_all = cloud.positions @ R.T + pose.translation
    infront = t_all[:, 2] > Z_NEAR
    stats.n_culled = int(cloud.n - infront.sum())
    idx = np.flatnonzero(infront)

    t = t_all[idx]
    q_norm = np.linalg.norm(cloud.quaternions[idx], axis=1)
    q_hat = cloud.quaternions[idx] / q_norm[:, None]
    Rq = _quat_to_rot(q_hat)
    Dvec = np.exp(2.0 * cloud.log_scales[idx])
    Sigma_w = np.einsum("mik,mk,mjk->mij", Rq, Dvec, Rq)

    x, y, zc = t[:, 0], t[:, 1], t[:, 2]
    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = K.fx / zc
    J[:, 0, 2] = -K.fx * x / zc**2
    J[:, 1, 1] = K.fy / zc
    J[:, 1, 2] = -K.fy * y / zc**2
    Mmat = np.einsum("mij,jk->mik", J, R)
    S2 = np.einsum("mij,mjk,mlk->mil", Mmat, Sigma_w, Mmat)
    a2, b2, c2 = S2[:, 0, 0], S2[:, 0, 1], S2[:, 1, 1]
    det = a2 * c2 - b2 * b2

    nondeg = det >= DET_MIN
    stats.n_degenerate = int(len(idx) - nondeg.sum())

    mean2d = np.stack([K.fx * x / zc + K.cx, K.fy * y / zc + K.cy], axis=1)
    lam_max = 0.5 * (a2 + c2) + np.sqrt(np.maximum(0.25 * (a2 - c2) ** 2 + b2 * b2, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(lam_max, 0.0))
    x0 = np.maximum(np.floor(mean2d[:, 0] - radius), 0).astype(np.int64)
    x1 = np.minimum(np.ceil(mean2d[:, 0] + radius), W - 1).astype(np.int64)
    y0 = np.maximum(np.floor(mean2d[:, 1] - radius), 0).astype(np.int64)
    y1 = np.minimum(np.ceil(mean2d[:, 1] + radius), H - 1).astype(np.int64)
    onscreen = (x0 <= x1) & (y0 <= y1)
    stats.n_offscreen = int((nondeg & ~onscreen).sum())

    keep = nondeg & onscreen
    order = np.argsort(zc[keep], kind="stable")
    kidx = np.flatnonzero(keep)[order]

    sel = idx[kidx]
    t = t[kidx]
    q_hat = q_hat[kidx]
    q_norm = q_norm[kidx]
    Rq = Rq[kidx]
    Dvec = Dvec[kidx]
    Sigma_w = Sigma_w[kidx]
    Mmat = Mmat[kidx]
    mean2d = np.ascontiguousarray(mean2d[kidx])
    a2, b2, c2, det = a2[kidx], b2[kidx], c2[kidx], det[kidx]
    bbox = np.stack([x0[kidx], x1[kidx], y0[kidx], y1[kidx]], axis=1)

    conic = np.stack([c2 / det, -b2 / det, a2 / det], axis=1)
    sigma2 = np.stack([a2, b2, c2], axis=1)
    zs = t[:, 2].copy()

    alpha_raw = 1.0 / (1.0 + np.exp(-cloud.opacity_logits[sel]))
    alpha = np.minimum(alpha_raw, OPACITY_MAX)

    v = cloud.positions[sel] - pose.camera_center()
    vnorm = np.linalg.norm(v, axis=1)
    vnorm = np.maximum(vnorm, 1e-12)
    dirs = v / vnorm[:, None]
    color = sh_colors(cloud.sh[sel], dirs)

    counts = np.zeros(W * H, dtype=np.int64)
    total = _kernels.count_pairs(bbox, mean2d, np.ascontiguousarray(conic), W, counts)
    stats.n_pairs = int(total)
    offsets = np.zeros(W * H + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    pair_gauss = np.empty(total, dtype=np.int64)
    cursor = np.zeros(W * H, dtype=np.int64)
    _kernels.fill_pairs(bbox, mean2d, np.ascontiguousarray(conic), W, offsets, cursor, pair_gauss)

    return _RenderContext(
        K=K, pose=pose, sel=sel, t_cam=t, mean2d=mean2d,
        conic=np.ascontiguousarray(conic), sigma2=sigma2, z=zs,
        color=np.ascontiguousarray(color), alpha=alpha, alpha_raw=alpha_raw,
        Rq=Rq, Dvec=Dvec, Mmat=Mmat, Sigma_w=Sigma_w,
        dirs=dirs, vnorm=vnorm, q_hat=q_hat, q_norm=q_norm,
        offsets=offsets, pair_gauss=pair_gauss,
        n_proc=np.zeros(W * H, dtype=np.int64), stats=stats,
    )


def render_with_context(
    cloud: GaussianCloud, K: CameraIntrinsics, pose: CameraPose
) -> tuple[RenderOutput, _RenderContext]:
    """Render and keep the intermediate state needed by render_backward."""
    ctx = _prepare(cloud, K, pose)
    W, H = K.width, K.height
    rgb = np.zeros((W * H, 3))
    depth = np.zeros(W * H)
    alphamap = np.zeros(W * H)
    _kernels.composite_forward(
        ctx.offsets, ctx.pair_gauss, ctx.mean2d, ctx.conic, ctx.color,
        ctx.alpha, ctx.z, W, H, rgb, depth, alphamap, ctx.n_proc,
    )
    out = RenderOutput(
        rgb=rgb.reshape(H, W, 3),
        depth=depth.reshape(H, W),
        alpha=alphamap.reshape(H, W),
        stats=ctx.stats,
    )
    return out, ctx


def render(cloud: GaussianCloud, K: CameraIntrinsics, pose: CameraPose) -> RenderOutput:
    """Splat the cloud into rgb, alpha-blended depth and accumulated alpha."""
    out, _ = render_with_context(cloud, K, pose)
    return out


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def render_backward(
    cloud: GaussianCloud,
    K: CameraIntrinsics,
    pose: CameraPose,
    d_rgb: np.ndarray | None = None,
    d_depth: np.ndarray | None = None,
    d_alpha: np.ndarray | None = None,
    ctx: _RenderContext | None = None,
) -> CloudGradients:
    """Chain upstream per-pixel gradients back to every cloud parameter.

    Skipped gaussians (behind the camera, degenerate or off-screen) get
    zero gradients.  Passing the context from render_with_context avoids
    re-projecting; otherwise the forward state is rebuilt here.
    """
    H, W = K.height, K.width
    zero_img = np.zeros((H, W))
    if d_rgb is None:
        d_rgb = np.zeros((H, W, 3))
    if d_depth is None:
        d_depth = zero_img
    if d_alpha is None:
        d_alpha = zero_img
    if d_rgb.shape != (H, W, 3) or d_depth.shape != (H, W) or d_alpha.shape != (H, W):
        raise ValueError(
            f"upstream shapes {d_rgb.shape}/{d_depth.shape}/{d_alpha.shape} "
            f"do not match the {H}x{W} render"
        )
    if ctx is None:
        _, ctx = render_with_context(cloud, K, pose)

    grads = CloudGradients.zeros_for(cloud)
    M = len(ctx.sel)
    if M == 0:
        return grads

    g_mean2d = np.zeros((M, 2))
    g_conic = np.zeros((M, 3))
    g_color = np.zeros((M, 3))
    g_alpha = np.zeros(M)
    g_z = np.zeros(M)
    P = len(ctx.pair_gauss)
    scratch = np.zeros((3, max(P, 1)))
    _kernels.composite_backward(
        ctx.offsets, ctx.pair_gauss, ctx.n_proc, ctx.mean2d, ctx.conic,
        ctx.color, ctx.alpha, ctx.z,
        np.ascontiguousarray(d_rgb.reshape(-1, 3), dtype=np.float64),
        np.ascontiguousarray(d_depth.reshape(-1), dtype=np.float64),
        np.ascontiguousarray(d_alpha.reshape(-1), dtype=np.float64),
        W, g_mean2d, g_conic, g_color, g_alpha, g_z,
        scratch[0], scratch[1], scratch[2],
    )

    sel = ctx.sel
    R = pose.rotation
    fx, fy = K.fx, K.fy
    x, y, zc = ctx.t_cam[:, 0], ctx.t_cam[:, 1], ctx.t_cam[:, 2]

    # opacity: alpha = min(sigmoid(l), 0.999); clamped entries get no grad
    dsig = ctx.alpha_raw * (1.0 - ctx.alpha_raw)
    dsig = np.where(ctx.alpha_raw >= OPACITY_MAX, 0.0, dsig)
    grads.opacity_logits[sel] = g_alpha * dsig

    # color -> sh and view direction
    dx_, dy_, dz_ = ctx.dirs[:, 0], ctx.dirs[:, 1], ctx.dirs[:, 2]
    grads.sh[sel, :, 0] = SH_C0 * g_color
    grads.sh[sel, :, 1] = -SH_C1 * dy_[:, None] * g_color
    grads.sh[sel, :, 2] = SH_C1 * dz_[:, None] * g_color
    grads.sh[sel, :, 3] = -SH_C1 * dx_[:, None] * g_color
    sh = cloud.sh[sel]
    g_dir = np.stack(
        [
            np.sum(g_color * (-SH_C1 * sh[:, :, 3]), axis=1),
            np.sum(g_color * (-SH_C1 * sh[:, :, 1]), axis=1),
            np.sum(g_color * (SH_C1 * sh[:, :, 2]), axis=1),
        ],
        axis=1,
    )
    # dir = v/|v|: project out the radial component
    radial = np.sum(ctx.dirs * g_dir, axis=1, keepdims=True)
    g_mu_sh = (g_dir - ctx.dirs * radial) / ctx.vnorm[:, None]

    # conic -> screen covariance (A = Sigma2^-1, dSigma2 = -A G_A A)
    G_A = np.empty((M, 2, 2))
    G_A[:, 0, 0] = g_conic[:, 0]
    G_A[:, 0, 1] = 0.5 * g_conic[:, 1]
    G_A[:, 1, 0] = 0.5 * g_conic[:, 1]
    G_A[:, 1, 1] = g_conic[:, 2]
    A = np.empty((M, 2, 2))
    A[:, 0, 0] = ctx.conic[:, 0]
    A[:, 0, 1] = ctx.conic[:, 1]
    A[:, 1, 0] = ctx.conic[:, 1]
    A[:, 1, 1] = ctx.conic[:, 2]
    G2 = -np.einsum("mij,mjk,mkl->mil", A, G_A, A)

    # screen covariance -> world covariance and M = J R
    G_Sw = np.einsum("mji,mjk,mkl->mil", ctx.Mmat, G2, ctx.Mmat)
    G_M = 2.0 * np.einsum("mij,mjk,mkl->mil", G2, ctx.Mmat, ctx.Sigma_w)
    G_J = np.einsum("mij,kj->mik", G_M, R)

    # world covariance -> rotation and log scales (Sigma_w = Rq diag(D) Rq^T)
    G_Rq = 2.0 * np.einsum("mij,mjk->mik", G_Sw, ctx.Rq) * ctx.Dvec[:, None, :]
    diagD = np.einsum("mji,mjk,mki->mi", ctx.Rq, G_Sw, ctx.Rq)
    grads.log_scales[sel] = diagD * 2.0 * ctx.Dvec

    dq_hat = _rot_backward(G_Rq, ctx.q_hat)
    radial_q = np.sum(ctx.q_hat * dq_hat, axis=1, keepdims=True)
    grads.quaternions[sel] = (dq_hat - ctx.q_hat * radial_q) / ctx.q_norm[:, None]

    # mean2d and J dependence on the camera-frame point t
    g_t = np.einsum("mji,mj->mi", _proj_jacobians(fx, fy, x, y, zc), g_mean2d)
    g_t[:, 0] += G_J[:, 0, 2] * (-fx / zc**2)
    g_t[:, 1] += G_J[:, 1, 2] * (-fy / zc**2)
    g_t[:, 2] += (
        G_J[:, 0, 0] * (-fx / zc**2)
        + G_J[:, 1, 1] * (-fy / zc**2)
        + G_J[:, 0, 2] * (2.0 * fx * x / zc**3)
        + G_J[:, 1, 2] * (2.0 * fy * y / zc**3)
    )
    g_t[:, 2] += g_z

    grads.positions[sel] = g_t @ R + g_mu_sh
    return grads


def _proj_jacobians(fx, fy, x, y, z):
    J = np.zeros((len(x), 2, 3))
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / z**2
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / z**2
    return J


# ---------------------------------------------------------------------------
# Density control
# ---------------------------------------------------------------------------

def densify_and_prune(
    cloud: GaussianCloud,
    grad_norm_mean: np.ndarray,
    tau_grad: float = 2e-4,
    tau_scale: float = 0.5,
    min_opacity: float = 0.005,
) -> GaussianCloud:
    """Clone high-gradient gaussians, split oversized ones, prune faint ones.

    Oversized gaussians (max scale > tau_scale) split into two children at
    +/-0.5 sigma along the major axis with scales shrunk by 1.6; otherwise a
    gaussian whose mean positional gradient norm exceeds tau_grad is cloned
    in place.  Gaussians with opacity below min_opacity are removed.
    """
    scales = np.exp(cloud.log_scales)
    alpha = 1.0 / (1.0 + np.exp(-cloud.opacity_logits))
    oversized = scales.max(axis=1) > tau_scale
    high_grad = np.asarray(grad_norm_mean) > tau_grad
    split = oversized & high_grad
    clone = high_grad & ~oversized
    keep = (alpha >= min_opacity) & ~split

    parts = [
        (cloud.positions[keep], cloud.quaternions[keep], cloud.log_scales[keep],
         cloud.opacity_logits[keep], cloud.sh[keep])
    ]
    if clone.any():
        csel = clone & (alpha >= min_opacity)
        parts.append((cloud.positions[csel], cloud.quaternions[csel],
                      cloud.log_scales[csel], cloud.opacity_logits[csel], cloud.sh[csel]))
    if split.any():
        ssel = split & (alpha >= min_opacity)
        if ssel.any():
            q_hat = cloud.quaternions[ssel]
            q_hat = q_hat / np.linalg.norm(q_hat, axis=1, keepdims=True)
            Rq = _quat_to_rot(q_hat)
            axis = np.argmax(cloud.log_scales[ssel], axis=1)
            major = Rq[np.arange(len(axis)), :, axis]
            sigma = np.exp(cloud.log_scales[ssel].max(axis=1))
            new_ls = cloud.log_scales[ssel] - np.log(1.6)
            for sign in (1.0, -1.0):
                parts.append((
                    cloud.positions[ssel] + sign * 0.5 * sigma[:, None] * major,
                    cloud.quaternions[ssel], new_ls,
                    cloud.opacity_logits[ssel], cloud.sh[ssel],
                ))
    return GaussianCloud(
        positions=np.concatenate([p[0] for p in parts]),
        quaternions=np.concatenate([p[1] for p in parts]),
        log_scales=np.concatenate([p[2] for p in parts]),
        opacity_logits=np.concatenate([p[3] for p in parts]),
        sh=np.concatenate([p[4] for p in parts]),
    )


# ---------------------------------------------------------------------------
# Checkpoint IO
# ---------------------------------------------------------------------------

def save_checkpoint(cloud: GaussianCloud, path) -> None:
    """Write magic, counts and per-gaussian float32 records."""
    rec = np.concatenate(
        [
            cloud.positions,
            cloud.quaternions,
            cloud.log_scales,
            cloud.opacity_logits[:, None],
            cloud.sh.reshape(cloud.n, 12),
        ],
        axis=1,
    ).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", cloud.n, 4))
        fh.write(rec.tobytes())


def load_checkpoint(path) -> GaussianCloud:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        n, n_sh = struct.unpack("<II", fh.read(8))
        if n_sh != 4:
            raise ValueError(f"unsupported SH coefficient count {n_sh}")
        data = np.frombuffer(fh.read(n * 23 * 4), dtype="<f4")
    if data.size != n * 23:
        raise ValueError("truncated checkpoint")
    rec = data.reshape(n, 23).astype(np.float64)
    return GaussianCloud(
        positions=rec[:, 0:3],
        quaternions=rec[:, 3:7],
        log_scales=rec[:, 7:10],
        opacity_logits=rec[:, 10],
        sh=rec[:, 11:23].reshape(n, 3, 4),
    )
