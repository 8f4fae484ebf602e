"""Optimizable Gaussian scene, cameras, and render buffers.

The scene is stored struct-of-arrays for speed; :class:`Gaussian` is the
per-element record view used for construction and inspection. Scales live
in log-space and opacity in logit-space so optimizer steps cannot leave
the valid domain; quaternions are renormalized after every optimizer step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, EmptyScene

CHECKPOINT_MAGIC = b"DNSPLAT1"
FLOATS_PER_GAUSSIAN = 14  # mean(3) quat(4) log_scale(3) opacity_logit(1) color(3)

SCALE_MIN = 1e-7
SCALE_MAX = 1e3
QUAT_UNIT_TOL = 1e-6


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


@dataclass
class Gaussian:
    """One splatting primitive.

    mean is in world meters, quat is (w, x, y, z) and unit, log_scale holds
    the natural log of per-axis scales, opacity = sigmoid(opacity_logit),
    color is RGB in [0, 1] (degree-0 appearance only).
    """

    mean: np.ndarray
    quat: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.quat = np.asarray(self.quat, dtype=np.float64).reshape(4)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.opacity_logit = float(self.opacity_logit)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scale)


class GaussianScene:
    """Struct-of-arrays container for the optimizable scene.

    Arrays are float64 and owned by the scene. The scene is treated as
    immutable during any render or loss evaluation; the trainer mutates the
    arrays in place between iterations.
    """

    def __init__(self, means, quats, log_scales, opacity_logits, colors,
                 background=(0.0, 0.0, 0.0)):
        self.means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.quats = np.ascontiguousarray(quats, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(n, 3)
        self.background = np.asarray(background, dtype=np.float64).reshape(3)

    @classmethod
    def from_gaussians(cls, gaussians, background=(0.0, 0.0, 0.0)) -> "GaussianScene":
        gaussians = list(gaussians)
        if not gaussians:
            return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
                       np.zeros(0), np.zeros((0, 3)), background)
        return cls(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.quat for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.color for g in gaussians]),
            background,
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.means[i].copy(), self.quats[i].copy(),
                        self.log_scales[i].copy(), float(self.opacity_logits[i]),
                        self.colors[i].copy())

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def gaussians(self):
        return list(self)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def copy(self) -> "GaussianScene":
        return GaussianScene(self.means.copy(), self.quats.copy(),
                             self.log_scales.copy(), self.opacity_logits.copy(),
                             self.colors.copy(), self.background.copy())

    def normalize_quats(self) -> None:
        """Project quaternions back onto the unit sphere (in place)."""
        norms = np.linalg.norm(self.quats, axis=1, keepdims=True)
        np.divide(self.quats, norms, out=self.quats, where=norms > 0)


@dataclass
class Violation:
    index: int | None
    field: str
    message: str

    def __str__(self) -> str:
        return self.message


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def add(self, index, field_name, message):
        self.violations.append(Violation(index, field_name, message))


def validate_scene(scene: GaussianScene) -> ValidationReport:
    """Check every scene invariant and report violations without raising."""
    report = ValidationReport()
    if len(scene) == 0:
        report.add(None, "scene", "scene is empty")
        return report
    if not np.all(np.isfinite(scene.background)):
        report.add(None, "background", "non-finite background")

    finite_mean = np.isfinite(scene.means).all(axis=1)
    finite_quat = np.isfinite(scene.quats).all(axis=1)
    finite_scale = np.isfinite(scene.log_scales).all(axis=1)
    finite_logit = np.isfinite(scene.opacity_logits)
    finite_color = np.isfinite(scene.colors).all(axis=1)
    qnorm = np.linalg.norm(scene.quats, axis=1)
    scales = np.exp(scene.log_scales, where=finite_scale[:, None],
                    out=np.full_like(scene.log_scales, np.nan))

    for i in range(len(scene)):
        if not finite_mean[i]:
            report.add(i, "mean", f"non-finite mean at index {i}")
        if not finite_quat[i]:
            report.add(i, "quat", f"non-finite quat at index {i}")
        elif abs(qnorm[i] - 1.0) > QUAT_UNIT_TOL:
            report.add(i, "quat", f"quat not unit at index {i}")
        if not finite_scale[i]:
            report.add(i, "log_scale", f"non-finite log_scale at index {i}")
        elif not np.all((scales[i] > SCALE_MIN) & (scales[i] < SCALE_MAX)):
            report.add(i, "log_scale", f"scale out of range at index {i}")
        if not finite_logit[i]:
            report.add(i, "opacity_logit", f"non-finite opacity_logit at index {i}")
        if not finite_color[i]:
            report.add(i, "color", f"non-finite color at index {i}")
    return report


def scene_aabb(scene: GaussianScene, k_sigma: float = 3.0):
    """Axis-aligned box containing every mean, padded per Gaussian by
    k_sigma times its largest scale.

    Returns (min, max) 3-vectors.
    """
    if len(scene) == 0:
        raise EmptyScene("scene_aabb of empty scene")
    if k_sigma < 0:
        raise ValueError("k_sigma must be non-negative")
    pad = k_sigma * np.exp(scene.log_scales).max(axis=1, keepdims=True)
    lo = (scene.means - pad).min(axis=0)
    hi = (scene.means + pad).max(axis=0)
    return lo, hi


class Camera:
    """Pinhole camera: +z forward, +x right, +y down; pixel centers at
    integer coordinates with (cx, cy) in pixels."""

    def __init__(self, fx, fy, cx, cy, width, height, cam_to_world,
                 validate: bool = True):
        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.width = int(width)
        self.height = int(height)
        self.cam_to_world = np.asarray(cam_to_world, dtype=np.float64).reshape(4, 4)
        if validate:
            self._check()

    def _check(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not np.all(np.isfinite(self.cam_to_world)):
            raise ValueError("non-finite camera pose")
        R = self.rotation
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("camera rotation has negative determinant")
        if np.abs(self.cam_to_world[3] - np.array([0, 0, 0, 1.0])).max() > 1e-9:
            raise ValueError("pose last row must be [0,0,0,1]")

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation (3x3)."""
        return self.cam_to_world[:3, :3]

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.cam_to_world[:3, 3]

    @property
    def world_to_cam_rotation(self) -> np.ndarray:
        return self.rotation.T

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.position) @ self.rotation


@dataclass
class RenderBuffers:
    """Per-pixel outputs of one forward render.

    depth is transmittance-normalized view-space z (0 where accumulated
    alpha is below the epsilon gate); normal is the composited camera-space
    normal, deliberately not renormalized. The trailing fields are forward
    internals the analytic backward pass consumes.
    """

    color: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    alpha: np.ndarray
    raw_depth: np.ndarray | None = None
    transmittance: np.ndarray | None = None
    vis_total: np.ndarray | None = None
    vis_contrib: np.ndarray | None = None
    settings: object | None = None
    scene_size: int | None = None

    @property
    def height(self) -> int:
        return self.color.shape[0]

    @property
    def width(self) -> int:
        return self.color.shape[1]

    def normal_normalized(self) -> np.ndarray:
        """Unit-length normals for visualization; zero where the composited
        normal has negligible magnitude."""
        norms = np.linalg.norm(self.normal, axis=2, keepdims=True)
        out = np.zeros_like(self.normal)
        np.divide(self.normal, norms, out=out, where=norms > 1e-12)
        return out


def save_checkpoint(scene: GaussianScene, path) -> None:
    """Write the binary scene checkpoint (little-endian, bit-exact round trip
    for float32 values)."""
    path = Path(path)
    n = len(scene)
    rows = np.empty((n, FLOATS_PER_GAUSSIAN), dtype="<f4")
    rows[:, 0:3] = scene.means
    rows[:, 3:7] = scene.quats
    rows[:, 7:10] = scene.log_scales
    rows[:, 10] = scene.opacity_logits
    rows[:, 11:14] = scene.colors
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", n))
        fh.write(rows.tobytes())


def load_checkpoint(path, background=(0.0, 0.0, 0.0)) -> GaussianScene:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(CHECKPOINT_MAGIC) + 8:
        raise CheckpointError(f"checkpoint too short: {path}")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    (n,) = struct.unpack_from("<Q", data, len(CHECKPOINT_MAGIC))
    body = data[len(CHECKPOINT_MAGIC) + 8:]
    expected = n * FLOATS_PER_GAUSSIAN * 4
    if len(body) != expected:
        raise CheckpointError(
            f"expected {expected} payload bytes for {n} Gaussians, got {len(body)}")
    rows = np.frombuffer(body, dtype="<f4").reshape(n, FLOATS_PER_GAUSSIAN)
    rows = rows.astype(np.float64)
    return GaussianScene(rows[:, 0:3], rows[:, 3:7], rows[:, 7:10],
                         rows[:, 10], rows[:, 11:14], background)
