"""Image, depth, and mesh evaluation metrics.

Mesh metrics default to 1-norm nearest-neighbor distances (a config switch
selects the 2-norm); normal agreement uses the absolute dot product so
winding conventions of externally produced meshes do not matter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (DegenerateMesh, EmptyCloud, EmptyMask, ShapeMismatch,
                     TooSmall)
from .geometry import OrientedPointCloud
from .losses import _ssim_with_grads

PSNR_CAP = 99.0
DELTA_THRESHOLD = 1.25
DEFAULT_TAU = 0.05


@dataclass
class DepthReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    valid_count: int
    rmse_log_skipped: int = 0  # pixels with non-positive prediction

    def as_dict(self) -> dict:
        return {"abs_rel": self.abs_rel, "sq_rel": self.sq_rel,
                "rmse": self.rmse, "rmse_log": self.rmse_log,
                "delta1": self.delta1, "delta2": self.delta2,
                "delta3": self.delta3, "valid_count": self.valid_count}


@dataclass
class MeshReport:
    accuracy: float
    completion: float
    chamfer_l1: float
    normal_consistency: float
    precision: float
    recall: float
    f_score: float
    tau: float

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "completion": self.completion,
                "chamfer_l1": self.chamfer_l1,
                "normal_consistency": self.normal_consistency,
                "precision": self.precision, "recall": self.recall,
                "f_score": self.f_score, "tau": self.tau}


def psnr(pred, gt) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; identical inputs
    report the 99.0 sentinel."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def ssim(pred, gt) -> float:
    """Mean local SSIM: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03,
    per channel then averaged."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    if pred.shape[0] < 11 or pred.shape[1] < 11:
        raise TooSmall("SSIM needs at least 11x11 images")
    value, _, _ = _ssim_with_grads(pred, gt, 11)
    return value


def depth_metrics(pred, gt, mask=None) -> DepthReport:
    """Standard depth error suite over pixels with positive ground truth.

    rmse_log skips (and counts) pixels with non-positive predictions;
    threshold accuracies treat them as failures.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    valid = gt > 0
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != valid.shape:
            raise ShapeMismatch("mask shape mismatch")
        valid &= mask
    if not valid.any():
        raise EmptyMask("no valid pixels for depth metrics")

    p = pred[valid]
    g = gt[valid]
    err = p - g
    abs_rel = float(np.mean(np.abs(err) / g))
    sq_rel = float(np.mean(err ** 2 / g))
    rmse = float(np.sqrt(np.mean(err ** 2)))

    pos = p > 0
    skipped = int((~pos).sum())
    if pos.any():
        rmse_log = float(np.sqrt(np.mean((np.log(p[pos]) - np.log(g[pos])) ** 2)))
    else:
        rmse_log = float("inf")

    ratio = np.full_like(p, np.inf)
    ratio[pos] = np.maximum(p[pos] / g[pos], g[pos] / p[pos])
    deltas = [float(np.mean(ratio < DELTA_THRESHOLD ** k)) for k in (1, 2, 3)]
    return DepthReport(abs_rel, sq_rel, rmse, rmse_log, *deltas,
                       valid_count=int(valid.sum()), rmse_log_skipped=skipped)


def _nn_indices(queries, refs, norm):
    tree = cKDTree(refs)
    p = 1 if norm == "l1" else 2
    _, idx = tree.query(queries, k=1, p=p)
    return idx


def _nn_dist(queries, refs, idx, norm):
    diff = queries - refs[idx]
    if norm == "l1":
        return np.abs(diff).sum(axis=1)
    return np.linalg.norm(diff, axis=1)


def mesh_metrics(pred: OrientedPointCloud, gt: OrientedPointCloud,
                 tau: float = DEFAULT_TAU, norm: str = "l1") -> MeshReport:
    """Bidirectional nearest-neighbor reconstruction metrics between two
    oriented point clouds at match threshold tau (meters)."""
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyCloud("mesh metrics need non-empty clouds")
    if norm not in ("l1", "l2"):
        raise ValueError("norm must be 'l1' or 'l2'")

    idx_pg = _nn_indices(pred.positions, gt.positions, norm)
    idx_gp = _nn_indices(gt.positions, pred.positions, norm)
    d_pg = _nn_dist(pred.positions, gt.positions, idx_pg, norm)
    d_gp = _nn_dist(gt.positions, pred.positions, idx_gp, norm)

    accuracy = float(np.mean(d_pg))
    completion = float(np.mean(d_gp))
    chamfer = 0.5 * (accuracy + completion)
    precision = float(np.mean(d_pg < tau))
    recall = float(np.mean(d_gp < tau))
    f_score = (2.0 * precision * recall / (precision + recall)
               if precision + recall > 0 else 0.0)

    normal_acc = float(np.mean(np.abs(
        np.einsum("ij,ij->i", pred.normals, gt.normals[idx_pg]))))
    normal_comp = float(np.mean(np.abs(
        np.einsum("ij,ij->i", gt.normals, pred.normals[idx_gp]))))
    nc = 0.5 * (normal_acc + normal_comp)
    return MeshReport(accuracy, completion, chamfer, nc, precision, recall,
                      f_score, float(tau))


def sample_mesh(mesh, n: int, seed: int = 0) -> OrientedPointCloud:
    """Area-weighted uniform sampling of a triangle mesh; point normals are
    the face normals."""
    if n <= 0:
        raise EmptyCloud("requested zero samples")
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    faces = np.asarray(mesh.faces, dtype=np.int64)
    if len(faces) == 0:
        raise DegenerateMesh("mesh has no faces")
    v0 = verts[faces[:, 0]]
    e1 = verts[faces[:, 1]] - v0
    e2 = verts[faces[:, 2]] - v0
    cross = np.cross(e1, e2)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if total <= 0:
        raise DegenerateMesh("mesh has zero total area")

    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(faces), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    over = u + v > 1.0
    u[over] = 1.0 - u[over]
    v[over] = 1.0 - v[over]
    points = v0[face_idx] + u[:, None] * e1[face_idx] + v[:, None] * e2[face_idx]
    normals = cross[face_idx] / np.linalg.norm(cross[face_idx], axis=1,
                                               keepdims=True)
    return OrientedPointCloud(points, normals)
