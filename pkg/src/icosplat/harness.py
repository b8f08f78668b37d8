"""Synthetic scenes with analytic ground truth.

Scenes are built from textured parallelograms, spheres and axis-aligned
boxes, ray traced per pixel center with exact intersection math.  Depth is
the camera-frame z of the first hit (not ray length), so a fronto-parallel
plane at z=d has depth exactly d.

Shading is flat albedo by default so multi-view photometric consistency
holds exactly on ground truth.  The "headlight" mode attaches a Lambertian
light to each camera, which makes the same surface point brighter or darker
depending on the viewpoint; it exists to exercise robustness of feature
matching against illumination change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import CameraIntrinsics, CameraPose, Z_NEAR, pixel_grid

_SH_C0 = 0.28209479177387814


# ---------------------------------------------------------------------------
# Textures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Texture:
    """Procedural texture over a primitive's [0,1]^2 uv chart.

    kind: "checker" | "noise" | "ramp"
    """

    kind: str = "checker"
    scale: float = 8.0
    color_a: tuple[float, float, float] = (0.9, 0.9, 0.9)
    color_b: tuple[float, float, float] = (0.1, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("checker", "noise", "ramp"):
            raise ValueError(f"unknown texture kind {self.kind!r}")


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash to [0, 1).  uint64 arithmetic wraps by design."""
    with np.errstate(over="ignore"):
        h = (
            ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
            + iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
            + np.uint64(seed % (1 << 32)) * np.uint64(0x165667B19E3779F9)
        )
        h ^= h >> np.uint64(33)
        h *= np.uint64(0xFF51AFD7ED558CCD)
        h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(u: np.ndarray, v: np.ndarray, scale: float, seed: int) -> np.ndarray:
    x = u * scale
    y = v * scale
    ix = np.floor(x).astype(np.int64)
    iy = np.floor(y).astype(np.int64)
    fx = x - ix
    fy = y - iy
    # smoothstep interpolation of lattice values
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    v00 = _hash01(ix, iy, seed)
    v10 = _hash01(ix + 1, iy, seed)
    v01 = _hash01(ix, iy + 1, seed)
    v11 = _hash01(ix + 1, iy + 1, seed)
    top = v00 * (1 - sx) + v10 * sx
    bot = v01 * (1 - sx) + v11 * sx
    return top * (1 - sy) + bot * sy


def texture_color(tex: Texture, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Evaluate the texture at uv arrays; returns (..., 3) colors."""
    ca = np.asarray(tex.color_a, dtype=float)
    cb = np.asarray(tex.color_b, dtype=float)
    if tex.kind == "checker":
        parity = (np.floor(u * tex.scale) + np.floor(v * tex.scale)) % 2.0
        return np.where(parity[..., None] < 0.5, ca, cb)
    if tex.kind == "ramp":
        t = np.clip(u, 0.0, 1.0)[..., None]
        return ca * (1 - t) + cb * t
    # noise: independent channel fields blended between the two colors
    out = np.empty(u.shape + (3,), dtype=float)
    for c in range(3):
        t = _value_noise(u, v, tex.scale, tex.seed * 3 + c)
        out[..., c] = ca[c] * (1 - t) + cb[c] * t
    return out


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Finite parallelogram: origin + a*span_u + b*span_v, (a, b) in [0,1]^2.

    Spans must be orthogonal (uv chart stays rectangular).
    """

    origin: tuple[float, float, float]
    span_u: tuple[float, float, float]
    span_v: tuple[float, float, float]
    texture: Texture = field(default_factory=Texture)

    def corners(self) -> np.ndarray:
        o = np.array(self.origin)
        eu = np.array(self.span_u)
        ev = np.array(self.span_v)
        return np.stack([o, o + eu, o + ev, o + eu + ev])


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    texture: Texture = field(default_factory=Texture)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by min/max corners."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    texture: Texture = field(default_factory=Texture)


Primitive = Plane | Sphere | Box


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple[Primitive, ...]
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Center and radius of a sphere containing all primitives."""
        pts = []
        for prim in self.primitives:
            if isinstance(prim, Plane):
                pts.append(prim.corners())
            elif isinstance(prim, Sphere):
                c = np.array(prim.center)
                pts.append(c[None, :] + prim.radius * np.array(
                    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
                ))
            else:
                lo = np.array(prim.lo)
                hi = np.array(prim.hi)
                pts.append(np.array([
                    [a, b, c] for a in (lo[0], hi[0]) for b in (lo[1], hi[1])
                    for c in (lo[2], hi[2])
                ]))
        allpts = np.concatenate(pts, axis=0)
        center = 0.5 * (allpts.min(axis=0) + allpts.max(axis=0))
        radius = float(np.linalg.norm(allpts - center, axis=1).max())
        return center, radius


# ---------------------------------------------------------------------------
# Ray tracing
# ---------------------------------------------------------------------------

@dataclass
class GroundTruthView:
    """Exact render: rgb, camera z-depth of the first hit, hit primitive id.

    depth is 0 and prim_id is -1 where no primitive is hit.
    """

    rgb: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    prim_id: np.ndarray  # (H, W) int

    @property
    def hit(self) -> np.ndarray:
        return self.prim_id >= 0


def _intersect_plane(prim: Plane, origin: np.ndarray, dirs: np.ndarray):
    o = np.array(prim.origin)
    eu = np.array(prim.span_u)
    ev = np.array(prim.span_v)
    n = np.cross(eu, ev)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(np.abs(denom) > 1e-15, ((o - origin) @ n) / denom, np.inf)
    h = origin + s[..., None] * dirs
    rel = h - o
    a = (rel @ eu) / (eu @ eu)
    b = (rel @ ev) / (ev @ ev)
    ok = (s > Z_NEAR) & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
    return np.where(ok, s, np.inf), a, b, np.broadcast_to(n / np.linalg.norm(n), dirs.shape)


def _intersect_sphere(prim: Sphere, origin: np.ndarray, dirs: np.ndarray):
    C = np.array(prim.center)
    oc = origin - C
    A = np.sum(dirs * dirs, axis=-1)
    B = 2.0 * (dirs @ oc)
    Cq = float(oc @ oc) - prim.radius**2
    disc = B * B - 4 * A * Cq
    sq = np.sqrt(np.maximum(disc, 0.0))
    s0 = (-B - sq) / (2 * A)
    s1 = (-B + sq) / (2 * A)
    s = np.where(s0 > Z_NEAR, s0, s1)
    ok = (disc >= 0) & (s > Z_NEAR)
    s = np.where(ok, s, np.inf)
    h = origin + s[..., None] * dirs
    nrm = (h - C) / prim.radius
    # uv from spherical angles
    u = 0.5 + np.arctan2(nrm[..., 0], nrm[..., 2]) / (2 * np.pi)
    v = 0.5 - np.arcsin(np.clip(nrm[..., 1], -1, 1)) / np.pi
    return s, u, v, nrm


def _intersect_box(prim: Box, origin: np.ndarray, dirs: np.ndarray):
    lo = np.array(prim.lo)
    hi = np.array(prim.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t0 = (lo - origin) * inv
    t1 = (hi - origin) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    enter = tmin.max(axis=-1)
    exit_ = tmax.min(axis=-1)
    s = np.where(enter > Z_NEAR, enter, exit_)
    ok = (exit_ >= np.maximum(enter, Z_NEAR)) & (s > Z_NEAR)
    s = np.where(ok, s, np.inf)
    h = origin + s[..., None] * dirs
    # face = axis achieving the entering slab
    axis = np.argmax(np.where(np.isfinite(tmin), tmin, -np.inf), axis=-1)
    size = hi - lo
    rel = (h - lo) / np.maximum(size, 1e-12)
    u = np.choose(axis, [rel[..., 1], rel[..., 0], rel[..., 0]])
    v = np.choose(axis, [rel[..., 2], rel[..., 2], rel[..., 1]])
    sign = np.sign(-dirs[np.arange(dirs.shape[0]), axis])
    nrm = np.zeros_like(dirs)
    nrm[np.arange(dirs.shape[0]), axis] = np.where(sign == 0, 1.0, sign)
    return s, u, v, nrm


def raytrace_rays(
    scene: SceneSpec,
    origin: np.ndarray,
    dirs: np.ndarray,
    shading: str = "flat",
    ambient: float = 0.3,
):
    """Trace world-space rays parameterized as origin + s * dirs.

    Returns (color (N,3), s (N,), prim_id (N,)).  s is in units of the dir
    vectors, so callers using dirs with unit camera-z get z-depth directly.
    """
    n = dirs.shape[0]
    best_s = np.full(n, np.inf)
    best_id = np.full(n, -1, dtype=np.int64)
    best_u = np.zeros(n)
    best_v = np.zeros(n)
    best_n = np.zeros((n, 3))
    for pid, prim in enumerate(scene.primitives):
        if isinstance(prim, Plane):
            s, u, v, nrm = _intersect_plane(prim, origin, dirs)
        elif isinstance(prim, Sphere):
            s, u, v, nrm = _intersect_sphere(prim, origin, dirs)
        else:
            s, u, v, nrm = _intersect_box(prim, origin, dirs)
        closer = s < best_s
        best_s = np.where(closer, s, best_s)
        best_id = np.where(closer, pid, best_id)
        best_u = np.where(closer, u, best_u)
        best_v = np.where(closer, v, best_v)
        best_n = np.where(closer[:, None], nrm, best_n)
    hit = best_id >= 0
    color = np.tile(np.asarray(scene.background, dtype=float), (n, 1))
    for pid, prim in enumerate(scene.primitives):
        sel = best_id == pid
        if not sel.any():
            continue
        color[sel] = texture_color(prim.texture, best_u[sel], best_v[sel])
    if shading == "headlight":
        hpts = origin + np.where(hit, best_s, 1.0)[:, None] * dirs
        to_cam = origin - hpts
        to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-12)
        ndl = np.abs(np.sum(best_n * to_cam, axis=1))
        shade = ambient + (1.0 - ambient) * ndl
        color[hit] *= shade[hit, None]
    elif shading != "flat":
        raise ValueError(f"unknown shading mode {shading!r}")
    best_s = np.where(hit, best_s, 0.0)
    return color, best_s, best_id


def raytrace_view(
    scene: SceneSpec,
    K: CameraIntrinsics,
    pose: CameraPose,
    shading: str = "flat",
) -> GroundTruthView:
    """Render the exact ground-truth view through pixel centers."""
    U, V = pixel_grid(K.width, K.height)
    dirs_cam = np.stack(
        [(U - K.cx) / K.fx, (V - K.cy) / K.fy, np.ones_like(U)], axis=-1
    ).reshape(-1, 3)
    dirs_world = dirs_cam @ pose.rotation  # R^T applied to each row
    origin = pose.camera_center()
    color, s, pid = raytrace_rays(scene, origin, dirs_world, shading=shading)
    H, W = K.height, K.width
    return GroundTruthView(
        rgb=color.reshape(H, W, 3),
        depth=s.reshape(H, W),
        prim_id=pid.reshape(H, W),
    )


def hit_points_world(gt: GroundTruthView, K: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """(H, W, 3) world-space first-hit points (undefined where no hit)."""
    U, V = pixel_grid(K.width, K.height)
    d = gt.depth
    X = (U - K.cx) / K.fx * d
    Y = (V - K.cy) / K.fy * d
    cam_pts = np.stack([X, Y, d], axis=-1)
    return (cam_pts - pose.translation) @ pose.rotation


def covisibility_mask(
    scene: SceneSpec,
    K: CameraIntrinsics,
    pose_ref: CameraPose,
    pose_src: CameraPose,
    gt_ref: GroundTruthView | None = None,
    tol: float = 1e-6,
) -> np.ndarray:
    """True where the ref-view surface point is unoccludedly visible in src.

    The ref hit point is projected into src; the mask requires the projection
    to be in front of the src camera, inside the image, and the src ray
    through that exact (continuous) pixel to hit within `tol` of the point.
    """
    if gt_ref is None:
        gt_ref = raytrace_view(scene, K, pose_ref)
    H, W = K.height, K.width
    pts = hit_points_world(gt_ref, K, pose_ref).reshape(-1, 3)
    hit = gt_ref.hit.reshape(-1)
    cam = pts @ pose_src.rotation.T + pose_src.translation
    z = cam[:, 2]
    front = z > Z_NEAR
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * cam[:, 0] / z + K.cx
        v = K.fy * cam[:, 1] / z + K.cy
    inb = front & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    cand = hit & inb
    mask = np.zeros(H * W, dtype=bool)
    if cand.any():
        dirs_cam = np.stack(
            [(u[cand] - K.cx) / K.fx, (v[cand] - K.cy) / K.fy, np.ones(cand.sum())],
            axis=-1,
        )
        dirs_world = dirs_cam @ pose_src.rotation
        origin = pose_src.camera_center()
        _, s, pid = raytrace_rays(scene, origin, dirs_world)
        hits = origin + s[:, None] * dirs_world
        close = (pid >= 0) & (np.linalg.norm(hits - pts[cand], axis=1) <= tol)
        mask[np.flatnonzero(cand)[close]] = True
    return mask.reshape(H, W)


def depth_edge_mask(depth: np.ndarray, rel_threshold: float = 0.01) -> np.ndarray:
    """Pixels adjacent to a depth discontinuity or hit/miss boundary."""
    d = np.asarray(depth, dtype=float)
    edge = np.zeros(d.shape, dtype=bool)
    jump_x = np.abs(np.diff(d, axis=1)) > rel_threshold * np.maximum(d[:, :-1], d[:, 1:])
    jump_y = np.abs(np.diff(d, axis=0)) > rel_threshold * np.maximum(d[:-1, :], d[1:, :])
    edge[:, :-1] |= jump_x
    edge[:, 1:] |= jump_x
    edge[:-1, :] |= jump_y
    edge[1:, :] |= jump_y
    return edge


def erode_mask(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Binary erosion with a 3x3 structuring element (border pixels drop out)."""
    m = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        padded = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=bool)
        padded[1:-1, 1:-1] = m
        out = padded[1:-1, 1:-1].copy()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                out &= padded[1 + dy : 1 + dy + m.shape[0], 1 + dx : 1 + dx + m.shape[1]]
        m = out
    return m


# ---------------------------------------------------------------------------
# Camera rigs and scene presets
# ---------------------------------------------------------------------------

def default_intrinsics(size: int = 64) -> CameraIntrinsics:
    """Square pinhole camera with ~43 degree horizontal field of view."""
    return CameraIntrinsics(
        fx=1.25 * size, fy=1.25 * size,
        cx=(size - 1) / 2.0, cy=(size - 1) / 2.0,
        width=size, height=size,
    )


def translation_pose(center: tuple[float, float, float]) -> CameraPose:
    """Identity-rotation camera positioned at `center` looking along +z."""
    c = np.asarray(center, dtype=float)
    return CameraPose(rotation=np.eye(3), translation=-c)


def look_at_pose(
    eye: tuple[float, float, float],
    target: tuple[float, float, float],
    up: tuple[float, float, float] = (0.0, 1.0, 0.0),
) -> CameraPose:
    """World-to-camera pose with the camera z axis toward `target`."""
    e = np.asarray(eye, dtype=float)
    t = np.asarray(target, dtype=float)
    z = t - e
    z = z / np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=float), z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("look direction parallel to up vector")
    x = x / nx
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose(rotation=R, translation=-R @ e)


@dataclass
class ScenePreset:
    """A scene plus posed train/test cameras sharing one intrinsics."""

    scene: SceneSpec
    intrinsics: CameraIntrinsics
    train_poses: list[CameraPose]
    test_poses: list[CameraPose]
    shading: str = "flat"


def _plane_z(z: float, half: float, texture: Texture) -> Plane:
    return Plane(
        origin=(-half, -half, z),
        span_u=(2 * half, 0.0, 0.0),
        span_v=(0.0, 2 * half, 0.0),
        texture=texture,
    )


def _step_multipliers(n: int) -> list[int]:
    """0, +1, -1, +2, -2, ... (n entries)."""
    out = [0]
    k = 1
    while len(out) < n:
        out.append(k)
        if len(out) < n:
            out.append(-k)
        k += 1
    return out


def preset_scene(name: str, size: int = 64, n_views: int | None = None) -> ScenePreset:
    """Named synthetic setups, each with n_views train and n_views test poses.

    plane3        pure-translation views of one fronto-parallel plane; camera
                  steps are multiples of 0.05 so the plane disparity
                  (fx * tx / z = 1.25*size * 0.05 / 2) is a whole number of
                  pixels and bilinear resampling is exact.  Default 3 views.
    occluder      textured background plane plus a nearer occluding square of
                  fine-grained noise; translated views with integer disparity
                  for both depths.  Default 4 views.
    weak-texture  contrast-0.05 checker plane plus a low-contrast box, small
                  baselines: the under-constrained training scene.  Default
                  3 views.
    orbit8        noise sphere on a backdrop viewed from a camera arc, shaded
                  with the view-dependent headlight model.  Default 8 views.

    Test poses sit between / beside the train poses so they are never
    duplicates.  Train poses for the translation presets keep the integer
    disparity property for any n_views; test poses deliberately break it.
    """
    K = default_intrinsics(size)
    if name == "plane3":
        n = 3 if n_views is None else n_views
        tex = Texture(kind="checker", scale=12.0,
                      color_a=(0.85, 0.3, 0.2), color_b=(0.15, 0.5, 0.8))
        scene = SceneSpec(primitives=(_plane_z(2.0, 1.2, tex),))
        step = 0.05
        train = [translation_pose((m * step, 0.0, 0.0)) for m in _step_multipliers(n)]
        test = [translation_pose(((m + 0.5) * step, 0.0, 0.0))
                for m in _step_multipliers(n)]
        return ScenePreset(scene, K, train, test, "flat")
    if name == "occluder":
        n = 4 if n_views is None else n_views
        back = Texture(kind="checker", scale=16.0,
                       color_a=(0.9, 0.85, 0.2), color_b=(0.2, 0.25, 0.7))
        front = Texture(kind="noise", scale=10.0, seed=7,
                        color_a=(0.95, 0.1, 0.1), color_b=(0.15, 0.0, 0.35))
        occ = Plane(
            origin=(-0.25, -0.25, 2.0),
            span_u=(0.5, 0.0, 0.0),
            span_v=(0.0, 0.5, 0.0),
            texture=front,
        )
        scene = SceneSpec(primitives=(_plane_z(4.0, 2.4, back), occ))
        step = 0.25
        mults = [0, 1, -1, 2] if n == 4 else _step_multipliers(n)
        train = [translation_pose((m * step, 0.0, 0.0)) for m in mults]
        test = [translation_pose(((m + 0.5) * step, 0.0, 0.0)) for m in mults]
        return ScenePreset(scene, K, train, test, "flat")
    if name == "weak-texture":
        n = 3 if n_views is None else n_views
        # Near-pixel-scale noise at 6% contrast: the 1px autocorrelation
        # leaves photometric optimization without a usable basin while the
        # locally normalized feature channels still resolve it sharply.
        ground = Texture(kind="noise", scale=90.0, seed=5,
                         color_a=(0.53, 0.53, 0.53), color_b=(0.47, 0.47, 0.47))
        boxtex = Texture(kind="checker", scale=4.0,
                         color_a=(0.73, 0.53, 0.33), color_b=(0.33, 0.53, 0.73))
        # Box right of every camera: with the one-sided +x camera line the
        # plane pixels just left of its shadow are visible in the leftmost
        # views but occluded in their source views, so nothing cross-view can
        # pin their depth.  A strip of fine vertical stripes painted across
        # that band gives those chronically uncertain pixels strong colors,
        # which is exactly the case the cycle filter exists to keep out of
        # virtual-view targets.
        box = Box(lo=(0.19, -0.35, 2.0), hi=(0.79, 0.25, 2.55), texture=boxtex)
        striptex = Texture(kind="checker", scale=3.0,
                           color_a=(0.73, 0.53, 0.33), color_b=(0.33, 0.53, 0.73))
        strip = Box(lo=(0.08, -1.2, 2.59), hi=(0.32, 1.2, 2.6), texture=striptex)
        scene = SceneSpec(primitives=(_plane_z(2.6, 1.5, ground), box, strip))
        # Step chosen so the disparity at the ground plane is an integer pixel
        # count (fx*step/z = 0.0625*size), keeping plane warps resampling-free.
        step = 0.13
        # One-sided offsets: for any reference view the other two sit on the
        # same side, so silhouette pixels can be occluded in every source at
        # once and the cycle filter has unambiguous work to do.
        offsets = [(0, 0), (1, 0), (2, 0), (0, 1), (0, 2),
                   (1, 1), (2, 2), (1, 2), (2, 1)]
        if n > len(offsets):
            raise ValueError(f"weak-texture preset supports at most {len(offsets)} views")
        train = [translation_pose((ox * step, oy * step, 0.0))
                 for ox, oy in offsets[:n]]
        # Held-out poses extrapolate outside the training hull so that
        # geometry errors actually cost reprojection accuracy.  Extrapolating
        # toward -x keeps the border-hugging box fully in frame.
        test = [translation_pose((ox * step - 1.5 * step, oy * step + 1.5 * step, 0.0))
                for ox, oy in offsets[:n]]
        return ScenePreset(scene, K, train, test, "flat")
    if name == "orbit8":
        n = 8 if n_views is None else n_views
        ball = Texture(kind="noise", scale=5.0, seed=3,
                       color_a=(0.9, 0.6, 0.2), color_b=(0.2, 0.3, 0.8))
        back = Texture(kind="checker", scale=12.0,
                       color_a=(0.7, 0.7, 0.75), color_b=(0.3, 0.3, 0.35))
        scene = SceneSpec(primitives=(
            _plane_z(3.5, 2.5, back),
            Sphere(center=(0.0, 0.0, 2.0), radius=0.45, texture=ball),
        ))
        target = (0.0, 0.0, 2.0)
        dang = 0.12
        train, test = [], []
        for i in range(n):
            ang = (i - (n - 1) / 2) * dang
            for poses, a in ((train, ang), (test, ang + dang / 2)):
                eye = (2.0 * np.sin(a), 0.0, 2.0 - 2.0 * np.cos(a))
                poses.append(look_at_pose(eye, target))
        return ScenePreset(scene, K, train, test, "headlight")
    raise ValueError(f"unknown scene preset {name!r}")


# ---------------------------------------------------------------------------
# Cloud initialization
# ---------------------------------------------------------------------------

def init_cloud(views, n_points: int, noise_sigma: float, seed: int):
    """Depth-lifted Gaussian cloud initialization.

    views: sequence of objects with .intrinsics, .pose, .image (H,W,3 in
    [0,1]) and .depth (H,W; > 0 where valid).  Pixels with valid depth are
    sampled uniformly, split evenly across views, back-projected to world
    and perturbed with isotropic Gaussian noise.  Initial scale is the mean
    nearest-neighbor distance, opacity starts at 0.1, colors come from the
    sampled pixels (degree-0 band only).
    """
    from .renderer import GaussianCloud

    views = [v for v in views if v.depth is not None and np.any(v.depth > 0)]
    if not views:
        raise ValueError("init_cloud requires at least one view with valid depth")
    rng = np.random.default_rng(seed)
    n_views = len(views)
    base = n_points // n_views
    counts = [base + (1 if i < n_points - base * n_views else 0) for i in range(n_views)]
    positions = []
    colors = []
    for view, count in zip(views, counts):
        valid = np.flatnonzero(view.depth > 0)
        if valid.size == 0 or count == 0:
            continue
        pick = rng.choice(valid, size=count, replace=valid.size < count)
        H, W = view.depth.shape
        vy, vx = np.divmod(pick, W)
        d = view.depth[vy, vx]
        K = view.intrinsics
        cam = np.stack(
            [(vx - K.cx) / K.fx * d, (vy - K.cy) / K.fy * d, d], axis=-1
        )
        world = (cam - view.pose.translation) @ view.pose.rotation
        positions.append(world)
        colors.append(view.image[vy, vx])
    pos = np.concatenate(positions, axis=0)
    col = np.concatenate(colors, axis=0)
    if noise_sigma > 0:
        pos = pos + noise_sigma * rng.standard_normal(pos.shape)
    n = pos.shape[0]
    if n >= 2:
        tree = cKDTree(pos)
        dists, _ = tree.query(pos, k=2)
        mean_nn = float(dists[:, 1].mean())
    else:
        mean_nn = 0.1
    mean_nn = max(mean_nn, 1e-6)
    sh = np.zeros((n, 3, 4))
    sh[:, :, 0] = (col - 0.5) / _SH_C0
    return GaussianCloud(
        positions=pos,
        quaternions=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        log_scales=np.full((n, 3), np.log(mean_nn)),
        opacity_logits=np.full(n, np.log(0.1 / 0.9)),
        sh=sh,
    )
