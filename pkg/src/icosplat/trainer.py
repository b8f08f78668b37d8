"""Three-stage curriculum trainer.

Stage 1 optimizes the base photometric loss alone; stage 2 adds the
multi-view feature consistency and edge-aware depth smoothness terms,
routed through the renderer's depth gradient; stage 3 adds appearance
supervision from synthesized virtual views, routed through the color
gradient.  The total loss is

    L = L_3dgs + lambda_mpc * L_mpc + lambda_smooth * L_smooth
        + lambda_app * L_app

and a consistency term is carried as a named zero-weight placeholder so
the four-term breakdown stays visible in logs.

Each iteration treats one training view as the reference (round-robin);
the remaining views are sources.  Reliability masks and the virtual view
are recomputed from the current cloud every stage-3 iteration.  All
randomness derives from TrainConfig.seed through named streams.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .appearance import (
    default_m,
    depth_error,
    reliability_mask,
    sample_virtual_pose,
    synthesize_virtual_view,
    virtual_view_loss,
)
from .dataset import Dataset, View
from .georeg import default_k, edge_aware_smoothness, extract_features, mpc_feature_loss, warp_features
from .geometry import relative_transform
from .metrics import psnr, ssim_and_grad
from .renderer import (
    LOG_SCALE_MAX,
    LOG_SCALE_MIN,
    CloudGradients,
    GaussianCloud,
    densify_and_prune,
    render,
    render_backward,
    render_with_context,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15

PARAM_FIELDS = ("positions", "quaternions", "log_scales", "opacity_logits", "sh")

# Geometric and appearance supervision only trusts pixels the cloud
# actually covers; below this alpha the rendered depth is mostly background.
ALPHA_COVERAGE_MIN = 0.5

# Position-lr decay horizon in optimizer steps.  Kept at the stock 30k-step
# convention independent of total_iters: a 2k-iteration run walks the first
# 2k steps of the same schedule instead of compressing the full decay into
# the run, which would freeze positions before the curriculum finishes.
LR_DECAY_HORIZON = 30_000


class TrainerError(RuntimeError):
    pass


def stream_seed(seed: int, stream: str) -> int:
    """Stable 32-bit sub-seed for a named consumer."""
    digest = hashlib.sha256(f"{seed}:{stream}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, stream))


@dataclass
class TrainConfig:
    """Loss weights, curriculum boundaries, and optimizer settings.

    k/m default to ceil((n-1)/2) for n training views when left None.
    r is the virtual-pose sampling radius in scene units; None resolves
    to 0.15x the bounding radius of the initial cloud.  lr_position is
    scaled by the scene extent and follows the stock exponential decay
    (1% over LR_DECAY_HORIZON steps); short runs use a truncated prefix
    of that schedule rather than a compressed one, so positions keep
    non-negligible mobility during the later curriculum stages.
    """

    lambda_mpc: float = 0.1
    lambda_smooth: float = 0.01
    lambda_app: float = 1.0
    lambda_dssim: float = 0.2
    total_iters: int = 2000
    stage2_start: int = 800
    stage3_start: int = 1200
    k: int | None = None
    m: int | None = None
    tau_factor: float = 0.01
    alpha_edge: float = 1.0
    r: float | None = None
    n_virtual: int = 1
    ccdf: bool = True
    lr_position: float = 1.6e-4
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_color: float = 2.5e-3
    n_init_points: int = 1200
    init_noise_sigma: float = 0.15
    densify_every: int = 0
    log_every: int = 50
    seed: int = 0
    deterministic: bool = True

    def validate(self) -> None:
        if self.total_iters < 0:
            raise TrainerError("total_iters must be >= 0")
        if self.total_iters > 0:
            if not (0 <= self.stage2_start <= self.stage3_start <= self.total_iters):
                raise TrainerError(
                    "stage boundaries must satisfy "
                    "0 <= stage2_start <= stage3_start <= total_iters, got "
                    f"{self.stage2_start}/{self.stage3_start}/{self.total_iters}")
        for name in ("lambda_mpc", "lambda_smooth", "lambda_app", "lambda_dssim"):
            if getattr(self, name) < 0:
                raise TrainerError(f"{name} must be >= 0")
        if self.n_virtual < 1:
            raise TrainerError("n_virtual must be >= 1")
        if self.log_every < 1:
            raise TrainerError("log_every must be >= 1")

    def resolved_k(self, n_views: int) -> int:
        return self.k if self.k is not None else default_k(n_views)

    def resolved_m(self, n_views: int) -> int:
        return self.m if self.m is not None else default_m(n_views)


@dataclass
class LossBreakdown:
    """Per-term loss values; l_consis is a zero-weight placeholder."""

    l_3dgs: float
    l_mpc: float
    l_smooth: float
    l_app: float
    l_consis: float
    total: float

    def named_terms(self) -> list[tuple[str, float]]:
        return [("l_3dgs", self.l_3dgs), ("l_mpc", self.l_mpc),
                ("l_smooth", self.l_smooth), ("l_app", self.l_app),
                ("l_consis", self.l_consis), ("total", self.total)]


@dataclass
class LogRow:
    iteration: int
    l_3dgs: float
    l_mpc: float
    l_smooth: float
    l_app: float
    total: float
    psnr_train: float
    psnr_test: float
    n_gaussians: int


def base_photometric_loss(
    rendered: np.ndarray,
    target: np.ndarray,
    lambda_dssim: float = 0.2,
    return_grad: bool = False,
):
    """(1 - lambda_dssim) * L1 + lambda_dssim * (1 - SSIM) / 2 on clamped color."""
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch {rendered.shape} vs {target.shape}")
    clamped = np.clip(rendered, 0.0, 1.0)
    diff = clamped - target
    l1 = float(np.abs(diff).mean())
    if lambda_dssim != 0.0:
        s, ds = ssim_and_grad(clamped, target)
        loss = (1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - s) / 2.0
    else:
        loss = l1
    if not return_grad:
        return loss
    grad = (1.0 - lambda_dssim) * np.sign(diff) / diff.size
    if lambda_dssim != 0.0:
        grad = grad - (lambda_dssim / 2.0) * ds
    gate = (rendered >= 0.0) & (rendered <= 1.0)
    return loss, np.where(gate, grad, 0.0)


def curriculum_schedule(iteration: int, config: TrainConfig) -> frozenset[str]:
    """Active loss terms at the given iteration."""
    active = {"l_3dgs"}
    if iteration >= config.stage2_start:
        active |= {"l_mpc", "l_smooth"}
    if iteration >= config.stage3_start:
        active.add("l_app")
    return frozenset(active)


def _cloud_center_radius(cloud: GaussianCloud) -> tuple[np.ndarray, float]:
    center = cloud.positions.mean(axis=0)
    radius = float(np.linalg.norm(cloud.positions - center, axis=1).max())
    return center, max(radius, 1e-6)


def total_loss_and_gradients(
    cloud: GaussianCloud,
    views: list[View],
    features: list[np.ndarray],
    config: TrainConfig,
    iteration: int,
    rng: np.random.Generator,
) -> tuple[LossBreakdown, CloudGradients]:
    n = len(views)
    ref_i = iteration % n
    ref = views[ref_i]
    K = ref.intrinsics
    active = curriculum_schedule(iteration, config)
    grads = CloudGradients.zeros_for(cloud)

    out_ref, ctx_ref = render_with_context(cloud, K, ref.pose)
    h, w = out_ref.depth.shape
    d_rgb = np.zeros((h, w, 3))
    d_depth = np.zeros((h, w))

    l_3dgs, d_base = base_photometric_loss(
        out_ref.rgb, ref.image, config.lambda_dssim, return_grad=True)
    d_rgb += d_base

    l_mpc = l_smooth = l_app = 0.0
    geo_active = "l_mpc" in active
    if geo_active and (config.lambda_mpc > 0 or config.lambda_smooth > 0):
        # coverage mask is a constant for the iteration (no gradient through alpha)
        geo_mask = out_ref.alpha >= ALPHA_COVERAGE_MIN
        if config.lambda_mpc > 0:
            k = config.resolved_k(n)
            warped = []
            for j in range(n):
                if j == ref_i:
                    continue
                T = relative_transform(ref.pose, views[j].pose)
                warped.append(warp_features(features[j], out_ref.depth, K, T))
            res = mpc_feature_loss(features[ref_i], warped, k, pixel_mask=geo_mask)
            l_mpc = res.loss
            d_depth += config.lambda_mpc * res.d_depth
        if config.lambda_smooth > 0:
            l_smooth, d_sm = edge_aware_smoothness(
                out_ref.depth, ref.image, config.alpha_edge,
                pixel_mask=geo_mask, return_grad=True)
            d_depth += config.lambda_smooth * d_sm

    if "l_app" in active and config.lambda_app > 0:
        outs = [out_ref if i == ref_i else render(cloud, views[i].intrinsics, views[i].pose)
                for i in range(n)]
        m = config.resolved_m(n)
        masks = []
        for i in range(n):
            covered = outs[i].alpha >= ALPHA_COVERAGE_MIN
            if config.ccdf:
                errs, vals = [], []
                for j in range(n):
                    if j == i:
                        continue
                    T = relative_transform(views[i].pose, views[j].pose)
                    e, v = depth_error(outs[i].depth, outs[j].depth, views[i].intrinsics, T)
                    errs.append(e)
                    vals.append(v)
                rel = reliability_mask(errs, vals, outs[i].depth, m=m,
                                       tau_factor=config.tau_factor, alpha=outs[i].alpha)
                masks.append(rel.mask & covered)
            else:
                masks.append(covered)
        center, radius = _cloud_center_radius(cloud)
        r = config.r if config.r is not None else 0.15 * radius
        poses = [v.pose for v in views]
        images = [v.image for v in views]
        depths = [o.depth for o in outs]
        for _ in range(config.n_virtual):
            pose_v = sample_virtual_pose(poses, r, rng, K, center)
            vv = synthesize_virtual_view(images, poses, depths, masks, pose_v, K)
            out_v, ctx_v = render_with_context(cloud, K, pose_v)
            lv, d_rgb_v = virtual_view_loss(vv.image, vv.mask, out_v.rgb, return_grad=True)
            l_app += lv / config.n_virtual
            if vv.mask.any():
                scale = config.lambda_app / config.n_virtual
                grads.add_(render_backward(
                    cloud, K, pose_v, scale * d_rgb_v,
                    np.zeros((h, w)), np.zeros((h, w)), ctx=ctx_v))

    grads.add_(render_backward(
        cloud, K, ref.pose, d_rgb, d_depth, np.zeros((h, w)), ctx=ctx_ref))

    total = (l_3dgs + config.lambda_mpc * l_mpc + config.lambda_smooth * l_smooth
             + config.lambda_app * l_app)
    return LossBreakdown(l_3dgs, l_mpc, l_smooth, l_app, 0.0, total), grads


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @staticmethod
    def zeros_for(cloud: GaussianCloud) -> "AdamState":
        state = AdamState()
        for name in PARAM_FIELDS:
            arr = getattr(cloud, name)
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state


def adam_step(
    cloud: GaussianCloud,
    grads: CloudGradients,
    state: AdamState,
    lrs: dict[str, float],
) -> tuple[GaussianCloud, AdamState]:
    """In-place Adam update with bias correction, then invariant enforcement."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name in PARAM_FIELDS:
        p = getattr(cloud, name)
        g = getattr(grads, name)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lrs[name] * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    norms = np.linalg.norm(cloud.quaternions, axis=1, keepdims=True)
    cloud.quaternions /= np.maximum(norms, 1e-12)
    np.clip(cloud.log_scales, LOG_SCALE_MIN, LOG_SCALE_MAX, out=cloud.log_scales)
    return cloud, state


def learning_rates(config: TrainConfig, extent: float, iteration: int) -> dict[str, float]:
    lr_pos = config.lr_position * extent
    lr_pos *= 0.01 ** (iteration / LR_DECAY_HORIZON)
    return {
        "positions": lr_pos,
        "quaternions": config.lr_rotation,
        "log_scales": config.lr_scale,
        "opacity_logits": config.lr_opacity,
        "sh": config.lr_color,
    }


def _mean_psnr(cloud: GaussianCloud, views: list[View]) -> float:
    if not views:
        return math.nan
    vals = []
    for v in views:
        out = render(cloud, v.intrinsics, v.pose)
        vals.append(psnr(np.clip(out.rgb, 0.0, 1.0), v.image))
    return float(np.mean(vals))


def train(dataset: Dataset, config: TrainConfig) -> tuple[GaussianCloud, list[LogRow]]:
    from .harness import init_cloud

    config.validate()
    views = dataset.train_views
    if len(views) < 2:
        raise TrainerError("training needs at least 2 views")
    if not dataset.test_ids:
        raise TrainerError("training needs at least 1 held-out view")

    cloud = init_cloud(views, config.n_init_points, config.init_noise_sigma,
                       stream_seed(config.seed, "init"))
    _, extent = _cloud_center_radius(cloud)
    cfg = config if config.r is not None else replace(config, r=0.15 * extent)
    rng_virtual = stream_rng(cfg.seed, "virtual-poses")
    features = [extract_features(v.image) for v in views]

    state = AdamState.zeros_for(cloud)
    log: list[LogRow] = []
    densify_accum = np.zeros(cloud.n)
    densify_count = 0

    for it in range(cfg.total_iters):
        breakdown, grads = total_loss_and_gradients(
            cloud, views, features, cfg, it, rng_virtual)
        for name, value in breakdown.named_terms():
            if not math.isfinite(value):
                raise TrainerError(f"non-finite {name} at iteration {it}")
        cloud, state = adam_step(cloud, grads, state,
                                 learning_rates(cfg, extent, it))
        if cfg.densify_every > 0:
            densify_accum += np.linalg.norm(grads.positions, axis=1)
            densify_count += 1
            if (it + 1) % cfg.densify_every == 0:
                cloud = densify_and_prune(cloud, densify_accum / densify_count)
                state = AdamState.zeros_for(cloud)
                densify_accum = np.zeros(cloud.n)
                densify_count = 0
        if it % cfg.log_every == 0 or it == cfg.total_iters - 1:
            log.append(LogRow(
                iteration=it,
                l_3dgs=breakdown.l_3dgs,
                l_mpc=breakdown.l_mpc,
                l_smooth=breakdown.l_smooth,
                l_app=breakdown.l_app,
                total=breakdown.total,
                psnr_train=_mean_psnr(cloud, views),
                psnr_test=_mean_psnr(cloud, dataset.test_views),
                n_gaussians=cloud.n,
            ))
    return cloud, log
