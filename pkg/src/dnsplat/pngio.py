"""PNG encoding/decoding for images, depth, and normal maps.

Conventions: color and alpha are 8-bit; depth is 16-bit millimeters
(values above 65.535 m saturate); normals are 8-bit with n mapped by
(n + 1) / 2 and re-normalized on decode.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

DEPTH_SCALE = 1000.0  # meters -> millimeters
DEPTH_MAX_MM = 65535


def write_color_png(path, image) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.rint(arr * 255.0).astype(np.uint8)).save(path)


def read_color_png(path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_gray_png(path, image) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.rint(arr * 255.0).astype(np.uint8), mode="L").save(path)


def write_depth_png(path, depth_m) -> None:
    mm = np.rint(np.asarray(depth_m, dtype=np.float64) * DEPTH_SCALE)
    mm = np.clip(mm, 0, DEPTH_MAX_MM).astype(np.uint16)
    Image.fromarray(mm).save(path)


def read_depth_png(path) -> np.ndarray:
    raw = np.asarray(Image.open(path))
    if raw.ndim != 2:
        raise ValueError(f"{path}: depth PNG must be single channel")
    return raw.astype(np.float64) / DEPTH_SCALE


def write_normal_png(path, normals) -> None:
    n = np.asarray(normals, dtype=np.float64)
    enc = np.clip((n + 1.0) * 0.5, 0.0, 1.0)
    Image.fromarray(np.rint(enc * 255.0).astype(np.uint8)).save(path)


def read_normal_png(path) -> np.ndarray:
    """Decode and re-normalize; near-zero vectors (invalid pixels) stay zero."""
    raw = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    n = 2.0 * (raw / 255.0) - 1.0
    norms = np.linalg.norm(n, axis=2, keepdims=True)
    out = np.zeros_like(n)
    np.divide(n, norms, out=out, where=norms > 0.25)
    return out
