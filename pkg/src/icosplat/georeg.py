"""Robust geometric regularization: features, top-k consistency, smoothness.

The feature extractor stands in for a pretrained network with a fixed
8-channel descriptor whose channels are all invariant to a global
brightness offset, so feature matching stays meaningful under the
harness's view-dependent lighting.  Distances are cosine based; per pixel
only the k most consistent source views contribute, which rejects occluded
observations without explicit visibility reasoning.

Gradients route into the reference depth map only (warp chain); feature
maps of training views are computed once and frozen.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate, uniform_filter

from .geometry import CameraIntrinsics, CameraPose
from .warp import inverse_warp

_EPS_STD = 1e-6
_EPS_NORM = 1e-12
_BIAS = 0.1
_FEATURE_MAGIC = b"ICOFEAT\x00"

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T
_LAPLACE = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def _local_mean(x: np.ndarray) -> np.ndarray:
    return uniform_filter(x, size=3, mode="nearest")


def _local_std(x: np.ndarray) -> np.ndarray:
    m = _local_mean(x)
    m2 = _local_mean(x * x)
    return np.sqrt(np.maximum(m2 - m * m, 0.0))


def _local_norm(x: np.ndarray) -> np.ndarray:
    return (x - _local_mean(x)) / (_local_std(x) + _EPS_STD)


def extract_features(image: np.ndarray) -> np.ndarray:
    """8-channel per-pixel descriptor, L2-normalized per pixel.

    Channels: locally mean/std-normalized grayscale; Sobel dx, dy of
    grayscale; Laplacian; locally normalized R-G and B-Y opponents; 3x3
    local std of grayscale; constant bias 0.1.  All local statistics use
    3x3 windows with replicate padding; every channel is unchanged by a
    global brightness offset.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    gray = img.mean(axis=2)
    rg = img[:, :, 0] - img[:, :, 1]
    by = img[:, :, 2] - 0.5 * (img[:, :, 0] + img[:, :, 1])
    feats = np.stack(
        [
            _local_norm(gray),
            correlate(gray, _SOBEL_X, mode="nearest"),
            correlate(gray, _SOBEL_Y, mode="nearest"),
            correlate(gray, _LAPLACE, mode="nearest"),
            _local_norm(rg),
            _local_norm(by),
            _local_std(gray),
            np.full_like(gray, _BIAS),
        ],
        axis=-1,
    )
    norm = np.linalg.norm(feats, axis=-1, keepdims=True)
    return np.where(norm > _EPS_NORM, feats / np.maximum(norm, _EPS_NORM), 0.0)


def save_features(features: np.ndarray, path) -> None:
    """Write an (H, W, C) feature map: magic, u32 W/H/C, float32 LE."""
    H, W, C = features.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<III", W, H, C))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _FEATURE_MAGIC:
            raise ValueError(f"bad feature file magic {magic!r}")
        W, H, C = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(W * H * C * 4), dtype="<f4")
    if data.size != W * H * C:
        raise ValueError("truncated feature file")
    return data.reshape(H, W, C).astype(np.float64)


# ---------------------------------------------------------------------------
# Cosine distance and top-k selection
# ---------------------------------------------------------------------------

def cosine_distance(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """(1 - cos)/2 in [0,1]; 1 where either vector is (near) zero.

    Operates on (..., C); inputs need not be exactly unit length.
    """
    n1 = np.linalg.norm(f1, axis=-1)
    n2 = np.linalg.norm(f2, axis=-1)
    dot = np.sum(f1 * f2, axis=-1)
    denom = n1 * n2
    ok = denom > _EPS_NORM
    cos = np.where(ok, dot / np.maximum(denom, _EPS_NORM), -1.0)
    return np.clip(0.5 * (1.0 - cos), 0.0, 1.0)


@dataclass
class TopKSelection:
    """Per-pixel k best source views: indices (k,H,W) with -1 padding,
    their errors (k,H,W), and the usable count per pixel (H,W)."""

    indices: np.ndarray
    errors: np.ndarray
    count: np.ndarray


def topk_select(errors: np.ndarray, masks: np.ndarray, k: int) -> TopKSelection:
    """Per pixel, the k valid views of smallest error (ties: lower index).

    errors and masks are (n-1, H, W).  Equivalent to minimizing the Eq-style
    sum over all size-k view subsets, since that sum is minimized by the k
    smallest elements.  Pixels with fewer than k valid views keep all their
    valid views, recorded in count.
    """
    n1 = errors.shape[0]
    if n1 < 1:
        raise ValueError("need at least one source view")
    if not 1 <= k <= n1:
        raise ValueError(f"k={k} out of range for {n1} source views")
    masked = np.where(masks, errors, np.inf)
    order = np.argsort(masked, axis=0, kind="stable")
    sorted_err = np.take_along_axis(masked, order, axis=0)
    top_idx = order[:k].astype(np.int64)
    top_err = sorted_err[:k]
    invalid = ~np.isfinite(top_err)
    top_idx = np.where(invalid, -1, top_idx)
    top_err = np.where(invalid, 0.0, top_err)
    count = np.minimum(masks.sum(axis=0), k).astype(np.int64)
    return TopKSelection(indices=top_idx, errors=top_err, count=count)


def default_k(n_views: int) -> int:
    """ceil((n-1)/2) source views kept per pixel."""
    return max(1, int(np.ceil((n_views - 1) / 2)))


# ---------------------------------------------------------------------------
# Multi-view feature consistency loss
# ---------------------------------------------------------------------------

@dataclass
class WarpedFeatures:
    """A source feature map warped into the reference view.

    dvalues_dD carries d(warped value)/d(reference depth) so the loss can
    differentiate into the rendered depth.
    """

    values: np.ndarray  # (H, W, C)
    mask: np.ndarray  # (H, W)
    dvalues_dD: np.ndarray  # (H, W, C)


def warp_features(
    features_src: np.ndarray,
    depth_ref: np.ndarray,
    K: CameraIntrinsics,
    T_ref_to_src: CameraPose,
) -> WarpedFeatures:
    wm, dvals = inverse_warp(features_src, depth_ref, K, T_ref_to_src, with_grad=True)
    return WarpedFeatures(values=wm.values, mask=wm.mask, dvalues_dD=dvals)


@dataclass
class MpcResult:
    loss: float
    d_depth: np.ndarray  # (H, W)
    selection: TopKSelection
    n_pixels: int  # pixels with at least one valid view


def mpc_feature_loss(
    F_ref: np.ndarray,
    warped: list[WarpedFeatures],
    k: int,
    pixel_mask: np.ndarray | None = None,
) -> MpcResult:
    """Mean over pixels of the top-k mean feature cosine distance.

    Selection is frozen (non-differentiable); the selected distances
    differentiate through the warped features into the reference depth.
    Pixels outside pixel_mask or with zero valid views contribute nothing.
    """
    H, W, C = F_ref.shape
    n1 = len(warped)
    dists = np.empty((n1, H, W))
    masks = np.empty((n1, H, W), dtype=bool)
    for j, wf in enumerate(warped):
        dists[j] = cosine_distance(F_ref, wf.values)
        masks[j] = wf.mask
    if pixel_mask is not None:
        masks &= pixel_mask[None]
    sel = topk_select(dists, masks, k)

    active = sel.count > 0
    n_pix = int(active.sum())
    d_depth = np.zeros((H, W))
    if n_pix == 0:
        return MpcResult(0.0, d_depth, sel, 0)

    cnt = np.where(active, sel.count, 1)
    per_pixel = sel.errors.sum(axis=0) / cnt
    loss = float(per_pixel[active].sum() / n_pix)

    # gradient: each selected distance carries weight 1/(count * n_pix);
    # cos = dot/(|f1| |f2|), d cos/d f2 = f1/(|f1||f2|) - dot f2/(|f1||f2|^3)
    n1ref = np.linalg.norm(F_ref, axis=-1)
    for j, wf in enumerate(warped):
        chosen = active & np.any(sel.indices == j, axis=0)
        if not chosen.any():
            continue
        f2 = wf.values
        n2 = np.linalg.norm(f2, axis=-1)
        ok = chosen & (n2 > _EPS_NORM) & (n1ref > _EPS_NORM)
        if not ok.any():
            continue
        n1s = np.where(ok, n1ref, 1.0)
        n2s = np.where(ok, n2, 1.0)
        dot = np.sum(F_ref * f2, axis=-1)
        # distances were clamped to [0,1]; clamped pixels get zero gradient
        raw = 0.5 * (1.0 - dot / (n1s * n2s))
        unclamped = ok & (raw > 0.0) & (raw < 1.0)
        w_pix = np.where(unclamped, 1.0 / (cnt * n_pix), 0.0)
        dcos_df2 = (
            F_ref / (n1s * n2s)[..., None]
            - (dot / (n1s * n2s**3))[..., None] * f2
        )
        ddist_dD = -0.5 * np.sum(dcos_df2 * wf.dvalues_dD, axis=-1)
        d_depth += w_pix * ddist_dD
    return MpcResult(loss, d_depth, sel, n_pix)


# ---------------------------------------------------------------------------
# Edge-aware smoothness
# ---------------------------------------------------------------------------

def edge_aware_smoothness(
    depth: np.ndarray,
    image: np.ndarray,
    alpha_edge: float = 1.0,
    pixel_mask: np.ndarray | None = None,
    return_grad: bool = False,
):
    """Mean over interior pixels of |grad D|_1 * exp(-alpha |grad I|_1).

    Forward differences; the image gradient magnitude is the channel mean
    of |dI/dx| + |dI/dy|.  With pixel_mask, a pixel's term is counted only
    when the pixel and both forward neighbors are inside the mask.
    """
    H, W = depth.shape
    Dx = depth[:, 1:] - depth[:, :-1]  # (H, W-1)
    Dy = depth[1:, :] - depth[:-1, :]  # (H-1, W)
    Ix = np.abs(image[:, 1:] - image[:, :-1]).mean(axis=-1)
    Iy = np.abs(image[1:, :] - image[:-1, :]).mean(axis=-1)
    # interior: pixels with both forward neighbors
    dx = Dx[: H - 1, :]  # (H-1, W-1), anchored at p
    dy = Dy[:, : W - 1]
    gI = Ix[: H - 1, :] + Iy[:, : W - 1]
    weight = np.exp(-alpha_edge * gI)
    if pixel_mask is None:
        inc = np.ones((H - 1, W - 1), dtype=bool)
    else:
        inc = (
            pixel_mask[: H - 1, : W - 1]
            & pixel_mask[: H - 1, 1:]
            & pixel_mask[1:, : W - 1]
        )
    n = int(inc.sum())
    if n == 0:
        loss = 0.0
    else:
        terms = (np.abs(dx) + np.abs(dy)) * weight
        loss = float(terms[inc].sum() / n)
    if not return_grad:
        return loss
    grad = np.zeros_like(depth)
    if n:
        wx = np.where(inc, weight * np.sign(dx), 0.0) / n
        wy = np.where(inc, weight * np.sign(dy), 0.0) / n
        grad[: H - 1, : W - 1] -= wx + wy
        grad[: H - 1, 1:] += wx
        grad[1:, : W - 1] += wy
    return loss, grad
