"""Dataset ingestion from the documented on-disk layout.

Layout::

    root/
      transforms.json          # intrinsics + frames with camera-to-world poses
      images/*.png             # 8-bit RGB
      depth/*.png              # optional, 16-bit millimeters
      mono_depth/*.png         # optional, 16-bit, unitless x1000
      normals/*.png            # optional, 8-bit (n+1)/2 camera-space
      sparse_depth/*.png       # optional, 16-bit millimeters

transforms.json holds {"fx","fy","cx","cy","w","h","frames":[{"file_path",
"transform_matrix"}]}; per-frame intrinsics override the globals. Poses are
camera-to-world, row-major, +z forward / +y down; pass ogl_pose=True for
datasets using the flipped (OpenGL-style) convention.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pngio
from .errors import DatasetError
from .scene import Camera

OPTIONAL_DIRS = ("depth", "mono_depth", "normals", "sparse_depth")


@dataclass
class TrainFrame:
    """One dataset record: RGB image plus optional geometric priors."""

    frame_id: str
    image: np.ndarray
    camera: Camera
    sensor_depth: np.ndarray | None = None
    mono_depth: np.ndarray | None = None
    normal_prior: np.ndarray | None = None
    sparse_depth: np.ndarray | None = None
    alignment: tuple | None = None

    def validate(self) -> None:
        h, w = self.camera.height, self.camera.width
        if self.image.shape != (h, w, 3):
            raise DatasetError(
                f"{self.frame_id}: image {self.image.shape} does not match "
                f"camera {h}x{w}")
        for name in ("sensor_depth", "mono_depth", "sparse_depth"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (h, w):
                raise DatasetError(
                    f"{self.frame_id}: {name} {arr.shape} does not match "
                    f"camera {h}x{w}")
        if self.normal_prior is not None:
            if self.normal_prior.shape != (h, w, 3):
                raise DatasetError(
                    f"{self.frame_id}: normal prior shape mismatch")
            norms = np.linalg.norm(self.normal_prior, axis=2)
            nz = norms > 0
            if nz.any() and np.abs(norms[nz] - 1.0).max() > 2e-2:
                raise DatasetError(
                    f"{self.frame_id}: normal prior not unit within 2e-2")


def _pose_from_json(mat, frame_id: str, ogl_pose: bool) -> np.ndarray:
    pose = np.asarray(mat, dtype=np.float64)
    if pose.shape != (4, 4):
        raise DatasetError(f"{frame_id}: transform_matrix must be 4x4")
    if not np.all(np.isfinite(pose)):
        raise DatasetError(f"{frame_id}: non-finite pose")
    if abs(np.linalg.det(pose[:3, :3])) < 1e-8:
        raise DatasetError(f"{frame_id}: non-invertible pose")
    if ogl_pose:
        pose = pose.copy()
        pose[:3, 1] *= -1.0
        pose[:3, 2] *= -1.0
    return pose


def load_dataset(root_dir, ogl_pose: bool = False) -> list[TrainFrame]:
    """Load every frame, sorted by frame id. Missing optional directories
    yield absent fields; layout violations raise DatasetError."""
    root = Path(root_dir)
    tf_path = root / "transforms.json"
    if not tf_path.is_file():
        raise DatasetError(f"missing transforms.json in {root}")
    try:
        meta = json.loads(tf_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"transforms.json is not valid JSON: {exc}") from exc
    for key in ("fx", "fy", "cx", "cy", "w", "h", "frames"):
        if key not in meta:
            raise DatasetError(f"transforms.json missing required key {key!r}")

    listed = {}
    for entry in meta["frames"]:
        if "file_path" not in entry or "transform_matrix" not in entry:
            raise DatasetError("frame entry missing file_path or transform_matrix")
        stem = Path(entry["file_path"]).stem
        listed[stem] = entry

    images_dir = root / "images"
    on_disk = {p.stem for p in images_dir.glob("*.png")} if images_dir.is_dir() else set()
    missing = sorted(set(listed) - on_disk)
    orphans = sorted(on_disk - set(listed))
    if missing or orphans:
        raise DatasetError(
            "image/pose mismatch: "
            f"missing images {missing}, unlisted images {orphans}")

    frames = []
    for stem in sorted(listed):
        entry = listed[stem]
        pose = _pose_from_json(entry["transform_matrix"], stem, ogl_pose)
        cam = Camera(
            fx=entry.get("fx", meta["fx"]), fy=entry.get("fy", meta["fy"]),
            cx=entry.get("cx", meta["cx"]), cy=entry.get("cy", meta["cy"]),
            width=entry.get("w", meta["w"]), height=entry.get("h", meta["h"]),
            cam_to_world=pose)
        image = pngio.read_color_png(images_dir / f"{stem}.png")

        def _aux(dirname, reader):
            p = root / dirname / f"{stem}.png"
            return reader(p) if p.is_file() else None

        frame = TrainFrame(
            frame_id=stem, image=image, camera=cam,
            sensor_depth=_aux("depth", pngio.read_depth_png),
            mono_depth=_aux("mono_depth", pngio.read_depth_png),
            normal_prior=_aux("normals", pngio.read_normal_png),
            sparse_depth=_aux("sparse_depth", pngio.read_depth_png))
        frame.validate()
        frames.append(frame)
    return frames


def split_train_eval(frames, every_n: int):
    """Every every_n-th frame (indices congruent to 0) goes to the eval
    split; order is preserved. With fewer than every_n frames everything
    stays in train and a warning is emitted."""
    if every_n < 2:
        raise ValueError("every_n must be >= 2")
    frames = list(frames)
    if len(frames) < every_n:
        warnings.warn(
            f"only {len(frames)} frames for every_n={every_n}; eval split is empty",
            stacklevel=2)
        return frames, []
    eval_frames = [f for i, f in enumerate(frames) if i % every_n == 0]
    train_frames = [f for i, f in enumerate(frames) if i % every_n != 0]
    return train_frames, eval_frames


def write_transforms(root, fx, fy, cx, cy, width, height, frame_entries) -> None:
    """Write transforms.json; frame_entries is [(frame_id, cam_to_world)]."""
    doc = {
        "fx": fx, "fy": fy, "cx": cx, "cy": cy, "w": width, "h": height,
        "frames": [
            {"file_path": f"images/{fid}.png",
             "transform_matrix": [[float(v) for v in row] for row in pose]}
            for fid, pose in frame_entries
        ],
    }
    path = Path(root) / "transforms.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
