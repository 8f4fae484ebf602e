"""Closed-form scale/shift alignment of monocular depth onto sparse metric
depth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFit, InsufficientPairs, ShapeMismatch

MONO_VARIANCE_FLOOR = 1e-12


@dataclass
class DepthPairs:
    """Per-pixel correspondences between a monocular and a sparse metric
    depth map."""

    mono: np.ndarray
    sparse: np.ndarray

    def __post_init__(self):
        self.mono = np.asarray(self.mono, dtype=np.float64).reshape(-1)
        self.sparse = np.asarray(self.sparse, dtype=np.float64).reshape(-1)
        if len(self.mono) != len(self.sparse):
            raise ShapeMismatch("mono/sparse pair length mismatch")
        if len(self.mono) < 2:
            raise InsufficientPairs("need at least 2 depth pairs")

    def __len__(self) -> int:
        return len(self.mono)


def collect_pairs(mono, sparse) -> DepthPairs:
    """Gather correspondences at pixels where the sparse map is positive and
    the monocular value is finite."""
    mono = np.asarray(mono, dtype=np.float64)
    sparse = np.asarray(sparse, dtype=np.float64)
    if mono.shape != sparse.shape:
        raise ShapeMismatch(f"mono {mono.shape} vs sparse {sparse.shape}")
    mask = (sparse > 0) & np.isfinite(mono)
    if mask.sum() < 2:
        raise InsufficientPairs(f"only {int(mask.sum())} valid pairs")
    return DepthPairs(mono[mask], sparse[mask])


def fit_scale_shift(pairs: DepthPairs) -> tuple[float, float]:
    """Least-squares (a, b) minimizing ||a*mono + b - sparse||^2:
    a = cov(mono, sparse) / var(mono), b = mean(sparse) - a*mean(mono)."""
    mono_mean = pairs.mono.mean()
    sparse_mean = pairs.sparse.mean()
    dm = pairs.mono - mono_mean
    var = float(dm @ dm) / len(pairs)
    if var <= MONO_VARIANCE_FLOOR:
        raise DegenerateFit("monocular depth is constant over the pairs")
    cov = float(dm @ (pairs.sparse - sparse_mean)) / len(pairs)
    a = cov / var
    b = sparse_mean - a * mono_mean
    return a, b


def apply_alignment(mono, a: float, b: float):
    """Elementwise a*mono + b with negative results clamped to 0 (invalid).

    Returns (aligned, clamped_count).
    """
    mono = np.asarray(mono, dtype=np.float64)
    aligned = a * mono + b
    clamped = int((aligned < 0).sum())
    return np.maximum(aligned, 0.0), clamped


def write_alignment_cache(path, rows) -> None:
    """One line per frame: 'frame_id a b clamped_count'."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame_id, a, b, clamped in rows:
            fh.write(f"{frame_id} {a!r} {b!r} {clamped}\n")


def read_alignment_cache(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 4:
                continue
            out[parts[0]] = (float(parts[1]), float(parts[2]), int(parts[3]))
    return out
