"""Synthetic box-room fixture with analytic ground-truth depth and normals.

A checkerboard-textured axis-aligned box interior gives both textured
regions (photometric signal) and large uniform cells (the textureless
failure mode depth supervision targets). Cameras sit on an interior ring.
Optional seeded depth noise and edge-bleed corruption emulate consumer
depth sensors that smear object boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import grey_dilation, maximum_filter, minimum_filter

from . import pngio
from .dataset import TrainFrame, write_transforms
from .errors import FixtureError
from .pointset import TriangleMesh, write_mesh_ply
from .scene import Camera

_DEFAULT_FACE_COLORS = np.array([
    [[0.85, 0.30, 0.25], [0.95, 0.90, 0.80]],  # +x
    [[0.25, 0.55, 0.85], [0.92, 0.92, 0.95]],  # -x
    [[0.30, 0.70, 0.35], [0.90, 0.95, 0.85]],  # +y
    [[0.80, 0.65, 0.25], [0.97, 0.93, 0.80]],  # -y
    [[0.55, 0.35, 0.75], [0.93, 0.88, 0.96]],  # +z
    [[0.35, 0.65, 0.65], [0.88, 0.95, 0.94]],  # -z
])


@dataclass
class BoxScene:
    """Axis-aligned box interior centered at the origin."""

    half_extents: np.ndarray = field(
        default_factory=lambda: np.array([1.2, 1.0, 0.9]))
    cell_size: float = 0.5
    face_colors: np.ndarray = field(
        default_factory=lambda: _DEFAULT_FACE_COLORS.copy())
    ring_count: int = 8
    ring_radius: float = 0.45
    ring_height: float = 0.0
    look_at: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64)
        self.face_colors = np.asarray(self.face_colors, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        if self.cell_size <= 0:
            raise FixtureError("cell size must be positive")
        if self.ring_radius >= self.half_extents[:2].min():
            raise FixtureError("camera ring leaves the box")

    @property
    def diameter(self) -> float:
        return 2.0 * float(np.linalg.norm(self.half_extents))

    def contains(self, point) -> bool:
        return bool(np.all(np.abs(np.asarray(point)) < self.half_extents))

    def surface_distance(self, points) -> np.ndarray:
        """Unsigned distance from points to the box surface."""
        q = np.abs(np.asarray(points, dtype=np.float64)) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return np.abs(outside + inside)


@dataclass
class SynthNoise:
    """Depth corruption model: Gaussian noise plus edge bleed, where depth
    near discontinuities is replaced by the local maximum (far surface)."""

    depth_sigma: float = 0.0
    edge_corrupt: bool = False
    edge_threshold: float = 0.1
    edge_dilate: int = 2
    edge_fraction: float = 0.8


def look_at_pose(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose looking from position to target (+z forward,
    +x right, +y down)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise FixtureError("look-at target coincides with the camera")
    forward /= norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-8:  # looking straight along up
        right = np.cross(forward, (1.0, 0.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    down /= np.linalg.norm(down)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = position
    return pose


def ring_cameras(box: BoxScene, n_views: int, width: int, height: int,
                 seed: int = 0, fov_deg: float = 85.0,
                 pitch_amplitude: float = 0.5) -> list[Camera]:
    """Cameras on the interior ring with seeded look-at jitter; alternate
    views pitch up and down so floor and ceiling get coverage."""
    if n_views < 2:
        raise FixtureError("need at least 2 views")
    rng = np.random.default_rng(seed)
    fx = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    cams = []
    for k in range(n_views):
        ang = 2.0 * np.pi * k / n_views
        pos = np.array([box.ring_radius * np.cos(ang),
                        box.ring_radius * np.sin(ang), box.ring_height])
        if not box.contains(pos):
            raise FixtureError("ring camera outside the box")
        tilt = pitch_amplitude * box.half_extents[2] * (1 if k % 2 else -1)
        target = box.look_at + np.array([0.0, 0.0, tilt])
        target = target + rng.uniform(-0.05, 0.05, 3)
        cams.append(Camera(fx, fx, (width - 1) / 2.0, (height - 1) / 2.0,
                           width, height, look_at_pose(pos, target)))
    return cams


def _trace_box(box: BoxScene, cam: Camera):
    """Exact ray/box-interior intersection for every pixel.

    Returns (t, face) where t is the view-space z of the hit (ray directions
    are scaled to unit camera z) and face indexes +x,-x,+y,-y,+z,-z.
    """
    h, w = cam.height, cam.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dirs_cam = np.stack([(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy,
                         np.ones_like(us)], axis=-1)
    dirs = dirs_cam @ cam.rotation.T
    origin = cam.position
    if not box.contains(origin):
        raise FixtureError("camera outside the box")

    t_best = np.full((h, w), np.inf)
    face = np.zeros((h, w), dtype=np.int8)
    for axis in range(3):
        d = dirs[:, :, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_pos = (box.half_extents[axis] - origin[axis]) / d
            t_neg = (-box.half_extents[axis] - origin[axis]) / d
        for t_axis, f in ((t_pos, 2 * axis), (t_neg, 2 * axis + 1)):
            hit = np.isfinite(t_axis) & (t_axis > 0) & (t_axis < t_best)
            t_best[hit] = t_axis[hit]
            face[hit] = f
    return t_best, face, dirs, origin


_FACE_UV_AXES = ((1, 2), (1, 2), (0, 2), (0, 2), (0, 1), (0, 1))
_FACE_NORMALS = np.array([
    [-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1],
], dtype=np.float64)  # inward


def render_gt(box: BoxScene, cam: Camera, noise: SynthNoise | None = None,
              rng: np.random.Generator | None = None) -> TrainFrame:
    """Analytic ground-truth frame for one camera: checkerboard color,
    exact view-space z depth, and the inward face normal in camera space."""
    t, face, dirs, origin = _trace_box(box, cam)
    hits = origin + t[:, :, None] * dirs

    h, w = cam.height, cam.width
    image = np.zeros((h, w, 3))
    normal_cam = np.zeros((h, w, 3))
    rcw = cam.world_to_cam_rotation
    for f in range(6):
        m = face == f
        if not m.any():
            continue
        ua, va = _FACE_UV_AXES[f]
        parity = (np.floor(hits[m, ua] / box.cell_size)
                  + np.floor(hits[m, va] / box.cell_size)).astype(np.int64) & 1
        image[m] = box.face_colors[f, parity]
        normal_cam[m] = _FACE_NORMALS[f] @ rcw.T

    depth = t.copy()
    if noise is not None and (noise.depth_sigma > 0 or noise.edge_corrupt):
        if rng is None:
            rng = np.random.default_rng(0)
        if noise.edge_corrupt:
            local_range = maximum_filter(depth, 3) - minimum_filter(depth, 3)
            edges = local_range > noise.edge_threshold
            size = 2 * noise.edge_dilate + 1
            edges = maximum_filter(edges.astype(np.uint8), size) > 0
            bleed = grey_dilation(depth, size=size)
            corrupt = edges & (rng.random(depth.shape) < noise.edge_fraction)
            depth[corrupt] = bleed[corrupt]
        if noise.depth_sigma > 0:
            depth = depth + rng.normal(0.0, noise.depth_sigma, depth.shape)
            depth = np.maximum(depth, 1e-3)

    return TrainFrame(frame_id="synth", image=image, camera=cam,
                      sensor_depth=depth, normal_prior=normal_cam)


def box_mesh(box: BoxScene) -> TriangleMesh:
    """The box's 12-triangle boundary mesh (inward orientation)."""
    hx, hy, hz = box.half_extents
    corners = np.array([[sx * hx, sy * hy, sz * hz]
                        for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                       dtype=np.float64)
    # index = 4*(x>0) + 2*(y>0) + (z>0)
    quads = [
        (4, 5, 7, 6),  # +x
        (0, 2, 3, 1),  # -x
        (2, 6, 7, 3),  # +y
        (0, 1, 5, 4),  # -y
        (1, 3, 7, 5),  # +z
        (0, 4, 6, 2),  # -z
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return TriangleMesh(corners, np.asarray(faces), None, 0)


def make_dataset(box: BoxScene, n_views: int, seed: int, out_dir,
                 width: int = 64, height: int = 64,
                 noise: SynthNoise | None = None,
                 write_mono: bool = True, sparse_stride: int = 8,
                 mono_scale: float = 0.5, mono_shift: float = -0.15) -> list[str]:
    """Emit a full dataset in the on-disk layout plus the analytic gt mesh.

    The monocular depth channel is a known affine distortion of the clean
    depth ((d - shift) / scale) so alignment recovers (mono_scale,
    mono_shift); the sparse channel subsamples the clean depth on a stride
    grid. Same seed twice writes byte-identical trees.
    """
    out = Path(out_dir)
    for sub in ("images", "depth", "normals") + (
            ("mono_depth", "sparse_depth") if write_mono else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)

    cams = ring_cameras(box, n_views, width, height, seed=seed)
    rng = np.random.default_rng(seed + 1)
    entries = []
    ids = []
    for k, cam in enumerate(cams):
        fid = f"frame_{k:04d}"
        clean = render_gt(box, cam)
        frame = render_gt(box, cam, noise=noise, rng=rng) if noise else clean
        pngio.write_color_png(out / "images" / f"{fid}.png", frame.image)
        pngio.write_depth_png(out / "depth" / f"{fid}.png", frame.sensor_depth)
        pngio.write_normal_png(out / "normals" / f"{fid}.png",
                               frame.normal_prior)
        if write_mono:
            mono = (clean.sensor_depth - mono_shift) / mono_scale
            pngio.write_depth_png(out / "mono_depth" / f"{fid}.png", mono)
            sparse = np.zeros_like(clean.sensor_depth)
            sparse[::sparse_stride, ::sparse_stride] = \
                clean.sensor_depth[::sparse_stride, ::sparse_stride]
            pngio.write_depth_png(out / "sparse_depth" / f"{fid}.png", sparse)
        entries.append((fid, cam.cam_to_world))
        ids.append(fid)

    cam0 = cams[0]
    write_transforms(out, cam0.fx, cam0.fy, cam0.cx, cam0.cy, width, height,
                     entries)
    write_mesh_ply(box_mesh(box), out / "gt_mesh.ply")
    return ids
