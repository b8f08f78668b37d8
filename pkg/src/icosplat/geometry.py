"""Pinhole camera model, rigid transforms and differentiable bilinear sampling.

Conventions used throughout the package:

* Continuous pixel coordinates (u, v) have their origin at the center of
  pixel (0, 0), so the integer coordinate (i, j) is the center of image
  cell [row j, col i].  Arrays are indexed [v, u] (row-major).
* Camera poses are world-to-camera rigid transforms X_cam = R @ X_world + t.
* Projections with camera-frame z <= Z_NEAR are invalid, never clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Projections at or behind this camera-frame depth are invalid.
Z_NEAR = 1e-4

_ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for domain errors (non-positive depth, invalid pose matrix)."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width < 2 or self.height < 2:
            raise GeometryError(f"image size must be >= 2x2, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError(f"principal point ({self.cx},{self.cy}) outside image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: X_cam = rotation @ X_world + translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise GeometryError(f"rotation is not orthonormal (|R^T R - I|_max = {err:.3e})")
        if np.linalg.det(R) < 0:
            raise GeometryError("rotation has negative determinant (reflection)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    def inverse(self) -> "CameraPose":
        return CameraPose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """Return the transform equivalent to applying `other` first, then self."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def camera_center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Pixel:
    u: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])


def backproject(K: CameraIntrinsics, p: Pixel, d: float) -> np.ndarray:
    """Lift pixel p at depth d to a camera-frame 3D point.

    Returns ((u - cx)/fx * d, (v - cy)/fy * d, d).  Depth must be positive.
    """
    if not d > 0:
        raise GeometryError(f"backproject requires positive depth, got {d}")
    if not (np.isfinite(p.u) and np.isfinite(p.v)):
        raise GeometryError(f"backproject requires finite pixel, got ({p.u}, {p.v})")
    return np.array(
        [(p.u - K.cx) / K.fx * d, (p.v - K.cy) / K.fy * d, float(d)]
    )


def project(K: CameraIntrinsics, X: np.ndarray) -> tuple[Pixel, float, bool]:
    """Project a camera-frame point to (pixel, depth, valid).

    valid is False when X.z <= Z_NEAR; the returned pixel is then meaningless
    and must not be used.
    """
    X = np.asarray(X, dtype=float)
    z = float(X[2])
    if z <= Z_NEAR:
        return Pixel(np.nan, np.nan), z, False
    u = K.fx * X[0] / z + K.cx
    v = K.fy * X[1] / z + K.cy
    return Pixel(u, v), z, True


def relative_transform(pose_ref: CameraPose, pose_src: CameraPose) -> CameraPose:
    """Transform taking ref-camera-frame points to src-camera-frame points.

    T = pose_src o pose_ref^-1, so T(pose_ref(X_world)) = pose_src(X_world).
    """
    return pose_src.compose(pose_ref.inverse())


def bilinear_sample(grid: np.ndarray, p: Pixel) -> tuple[np.ndarray, bool, np.ndarray]:
    """Bilinearly sample an (H, W, C) grid at continuous pixel p.

    Returns (value (C,), in_bounds, jacobian (C, 2)) where the jacobian is
    d(value)/d(u, v).  Samples are valid only for u in [0, W-1] and
    v in [0, H-1]; out-of-bounds samples return zeros with in_bounds False
    (values are never edge-clamped into validity).  Grids must be at least
    2x2.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 2:
        grid = grid[:, :, None]
    H, W, C = grid.shape
    u, v = float(p.u), float(p.v)
    if not (0.0 <= u <= W - 1 and 0.0 <= v <= H - 1):
        return np.zeros(C), False, np.zeros((C, 2))
    # Clamp the base index so exact right/bottom border samples stay valid.
    u0 = min(int(np.floor(u)), W - 2)
    v0 = min(int(np.floor(v)), H - 2)
    fu = u - u0
    fv = v - v0
    g00 = grid[v0, u0]
    g01 = grid[v0, u0 + 1]
    g10 = grid[v0 + 1, u0]
    g11 = grid[v0 + 1, u0 + 1]
    top = g00 * (1 - fu) + g01 * fu
    bot = g10 * (1 - fu) + g11 * fu
    value = top * (1 - fv) + bot * fv
    d_du = (g01 - g00) * (1 - fv) + (g11 - g10) * fv
    d_dv = bot - top
    return value, True, np.stack([d_du, d_dv], axis=1)


def bilinear_sample_map(
    grid: np.ndarray, U: np.ndarray, V: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling at coordinate arrays U, V (same shape).

    Returns (values (*U.shape, C), in_bounds (*U.shape,), jac (*U.shape, C, 2)).
    Identical semantics to `bilinear_sample` applied elementwise; out-of-bounds
    entries are zero.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 2:
        grid = grid[:, :, None]
    H, W, C = grid.shape
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    ok = (U >= 0.0) & (U <= W - 1) & (V >= 0.0) & (V <= H - 1)
    Uc = np.where(ok, U, 0.0)
    Vc = np.where(ok, V, 0.0)
    u0 = np.minimum(np.floor(Uc).astype(np.int64), W - 2)
    v0 = np.minimum(np.floor(Vc).astype(np.int64), H - 2)
    fu = (Uc - u0)[..., None]
    fv = (Vc - v0)[..., None]
    g00 = grid[v0, u0]
    g01 = grid[v0, u0 + 1]
    g10 = grid[v0 + 1, u0]
    g11 = grid[v0 + 1, u0 + 1]
    top = g00 * (1 - fu) + g01 * fu
    bot = g10 * (1 - fu) + g11 * fu
    values = top * (1 - fv) + bot * fv
    d_du = (g01 - g00) * (1 - fv) + (g11 - g10) * fv
    d_dv = bot - top
    jac = np.stack([d_du, d_dv], axis=-1)
    values = np.where(ok[..., None], values, 0.0)
    jac = np.where(ok[..., None, None], jac, 0.0)
    return values, ok, jac


def projection_jacobian(K: CameraIntrinsics, X: np.ndarray) -> np.ndarray:
    """2x3 Jacobian of the pinhole projection (u, v) w.r.t. the camera point X."""
    x, y, z = float(X[0]), float(X[1]), float(X[2])
    iz = 1.0 / z
    return np.array(
        [[K.fx * iz, 0.0, -K.fx * x * iz * iz], [0.0, K.fy * iz, -K.fy * y * iz * iz]]
    )


def pixel_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Meshgrid of pixel-center coordinates: U, V with shape (height, width)."""
    U, V = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    return U, V
