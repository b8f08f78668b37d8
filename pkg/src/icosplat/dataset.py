"""Dataset directory I/O.

A dataset is a directory with

    cameras.json        array of {id, fx, fy, cx, cy, width, height,
                        R: 9 floats row-major world->camera, t: 3 floats}
    images/view_{id}.png    8-bit RGB
    depth/view_{id}.icod    "ICODPTH\\0", u32 W, u32 H, then W*H
                            little-endian float32, row-major
    split.json          {"train": [ids], "test": [ids]}

Images are stored quantized to 8 bits; depth keeps full float32 precision
because it is the oracle for depth-error metrics.  All writers are
byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, CameraPose

_DEPTH_MAGIC = b"ICODPTH\x00"


class DatasetError(ValueError):
    pass


@dataclass
class View:
    """One posed image, with ground-truth depth when the source provides it."""

    view_id: int
    intrinsics: CameraIntrinsics
    pose: CameraPose
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    depth: np.ndarray | None = None  # (H, W), 0 where invalid


@dataclass
class Dataset:
    root: Path
    views: dict[int, View]
    train_ids: list[int]
    test_ids: list[int]

    @property
    def train_views(self) -> list[View]:
        return [self.views[i] for i in self.train_ids]

    @property
    def test_views(self) -> list[View]:
        return [self.views[i] for i in self.test_ids]


def image_to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.round(rgb * 255.0), 0.0, 255.0).astype(np.uint8)


def save_image_png(path: Path, rgb: np.ndarray) -> None:
    Image.fromarray(image_to_uint8(rgb), "RGB").save(path)


def load_image_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_depth(path: Path, depth: np.ndarray) -> None:
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(_DEPTH_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def load_depth(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(_DEPTH_MAGIC)] != _DEPTH_MAGIC:
        raise DatasetError(f"{path}: bad depth magic")
    w, h = struct.unpack_from("<II", raw, len(_DEPTH_MAGIC))
    body = raw[len(_DEPTH_MAGIC) + 8 :]
    expect = w * h * 4
    if len(body) != expect:
        raise DatasetError(f"{path}: expected {expect} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def save_dataset(root: Path, dataset: Dataset) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    cams = []
    for vid in sorted(dataset.views):
        v = dataset.views[vid]
        K, pose = v.intrinsics, v.pose
        cams.append({
            "id": vid,
            "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
            "width": K.width, "height": K.height,
            "R": [float(x) for x in pose.rotation.reshape(-1)],
            "t": [float(x) for x in pose.translation],
        })
        save_image_png(root / "images" / f"view_{vid}.png", v.image)
        if v.depth is not None:
            save_depth(root / "depth" / f"view_{vid}.icod", v.depth)
    (root / "cameras.json").write_text(json.dumps(cams, indent=2) + "\n")
    split = {"train": list(dataset.train_ids), "test": list(dataset.test_ids)}
    (root / "split.json").write_text(json.dumps(split, indent=2) + "\n")


def load_dataset(root: Path) -> Dataset:
    root = Path(root)
    cam_path = root / "cameras.json"
    if not cam_path.is_file():
        raise DatasetError(f"not a dataset directory (missing {cam_path})")
    cams = json.loads(cam_path.read_text())
    views: dict[int, View] = {}
    for cam in cams:
        vid = int(cam["id"])
        if vid in views:
            raise DatasetError(f"duplicate view id {vid} in cameras.json")
        K = CameraIntrinsics(cam["fx"], cam["fy"], cam["cx"], cam["cy"],
                             int(cam["width"]), int(cam["height"]))
        pose = CameraPose(
            rotation=np.array(cam["R"], dtype=np.float64).reshape(3, 3),
            translation=np.array(cam["t"], dtype=np.float64),
        )
        image = load_image_png(root / "images" / f"view_{vid}.png")
        if image.shape != (K.height, K.width, 3):
            raise DatasetError(
                f"view {vid}: image shape {image.shape[:2]} does not match "
                f"cameras.json {K.height}x{K.width}")
        depth_path = root / "depth" / f"view_{vid}.icod"
        depth = None
        if depth_path.is_file():
            depth = load_depth(depth_path)
            if depth.shape != (K.height, K.width):
                raise DatasetError(f"view {vid}: depth shape mismatch")
        views[vid] = View(vid, K, pose, image, depth)
    split = json.loads((root / "split.json").read_text())
    train_ids = [int(i) for i in split["train"]]
    test_ids = [int(i) for i in split["test"]]
    for vid in train_ids + test_ids:
        if vid not in views:
            raise DatasetError(f"split.json references unknown view id {vid}")
    if len(train_ids) < 2:
        raise DatasetError("dataset needs at least 2 training views")
    return Dataset(root, views, train_ids, test_ids)
