"""The regularization loss family with analytic gradients with respect to
rendered buffers.

Every loss returns (value, gradient) where the gradient is exact for the
function as implemented (subgradient 0 at the kinks of L1/Huber and through
clamps). Depth losses reduce by the mean over valid pixels; invalid pixels
(gt <= 0 or masked out) contribute zero and are excluded from the
denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import EmptyMask, EmptyScene, ShapeMismatch, TooSmall
from .scene import GaussianScene

DEPTH_LOSS_KINDS = ("mse", "l1", "logl1", "huberl1", "dssiml1", "eas",
                    "edge-logl1")

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
DSSIM_ALPHA = 0.85
PHOTOMETRIC_SSIM_WEIGHT = 0.2


def _gaussian_window(win: int, sigma: float) -> np.ndarray:
    r = np.arange(win, dtype=np.float64) - (win - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k /= k.sum()
    return np.outer(k, k)


def _fit_window(h: int, w: int, requested: int = SSIM_WINDOW) -> int:
    win = min(requested, h, w)
    if win % 2 == 0:
        win -= 1
    if win < 1:
        raise TooSmall("image too small for a windowed statistic")
    return win


class _SsimCore:
    """Local SSIM with a Gaussian window ('valid' support) and its exact
    adjoint-based backward for both inputs."""

    def __init__(self, win: int, sigma: float = SSIM_SIGMA,
                 k1: float = SSIM_K1, k2: float = SSIM_K2,
                 data_range: float = 1.0):
        self.kernel = _gaussian_window(win, sigma)
        self.c1 = (k1 * data_range) ** 2
        self.c2 = (k2 * data_range) ** 2

    def _blur(self, img):
        return convolve2d(img, self.kernel, mode="valid")

    def _adjoint(self, grad):
        return convolve2d(grad, self.kernel, mode="full")

    def value_and_grads(self, x, y):
        """Mean SSIM over the valid window positions of one channel pair,
        plus gradients with respect to x and y."""
        mu_x = self._blur(x)
        mu_y = self._blur(y)
        ex2 = self._blur(x * x)
        ey2 = self._blur(y * y)
        exy = self._blur(x * y)
        sx = ex2 - mu_x * mu_x
        sy = ey2 - mu_y * mu_y
        sxy = exy - mu_x * mu_y

        a1 = 2.0 * mu_x * mu_y + self.c1
        a2 = 2.0 * sxy + self.c2
        b1 = mu_x * mu_x + mu_y * mu_y + self.c1
        b2 = sx + sy + self.c2
        ssim_map = (a1 * a2) / (b1 * b2)
        value = float(ssim_map.mean())

        g = np.full_like(ssim_map, 1.0 / ssim_map.size)
        d_a1 = g * a2 / (b1 * b2)
        d_a2 = g * a1 / (b1 * b2)
        d_b1 = -g * a1 * a2 / (b1 * b1 * b2)
        d_b2 = -g * a1 * a2 / (b1 * b2 * b2)

        d_mu_x = 2.0 * (mu_y * d_a1 + mu_x * d_b1 - mu_x * d_b2 - mu_y * d_a2)
        d_mu_y = 2.0 * (mu_x * d_a1 + mu_y * d_b1 - mu_y * d_b2 - mu_x * d_a2)
        d_e2 = d_b2
        d_exy = 2.0 * d_a2

        gx = (self._adjoint(d_mu_x) + 2.0 * x * self._adjoint(d_e2)
              + y * self._adjoint(d_exy))
        gy = (self._adjoint(d_mu_y) + 2.0 * y * self._adjoint(d_e2)
              + x * self._adjoint(d_exy))
        return value, gx, gy


def _ssim_with_grads(pred, gt, win: int):
    """Channel-averaged SSIM and gradients; accepts HxW or HxWxC arrays."""
    core = _SsimCore(win)
    if pred.ndim == 2:
        return core.value_and_grads(pred, gt)
    vals = 0.0
    gx = np.empty_like(pred)
    gy = np.empty_like(gt)
    c = pred.shape[2]
    for ch in range(c):
        v, gxc, gyc = core.value_and_grads(pred[:, :, ch], gt[:, :, ch])
        vals += v
        gx[:, :, ch] = gxc / c
        gy[:, :, ch] = gyc / c
    return vals / c, gx, gy


def edge_weight(image) -> np.ndarray:
    """Per-pixel exp(-|grad I|) weight from the channel-mean intensity.

    Gradients are central differences with replicated borders, so the weight
    lies in (0, 1] and equals 1 on constant images.
    """
    image = np.asarray(image, dtype=np.float64)
    intensity = image.mean(axis=2) if image.ndim == 3 else image
    padded = np.pad(intensity, 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return np.exp(-np.hypot(gx, gy))


def _valid_mask(pred, gt, valid):
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    mask = gt > 0
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != pred.shape:
            raise ShapeMismatch("mask shape mismatch")
        mask &= valid
    if not mask.any():
        raise EmptyMask("no valid pixels for depth loss")
    return mask


def depth_loss(pred, gt, valid=None, kind: str = "edge-logl1", image=None):
    """Depth regularization objectives.

    kind selects among mse / l1 / logl1 / huberl1 / dssiml1 / eas /
    edge-logl1; the edge-aware kinds weight per-pixel terms by
    exp(-|grad I|) of the supplied RGB image before the mean. Returns
    (value, gradient w.r.t. pred).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if kind not in DEPTH_LOSS_KINDS:
        raise ValueError(f"unknown depth loss kind {kind!r}")
    if kind in ("eas", "edge-logl1") and image is None:
        raise ValueError(f"depth loss kind {kind!r} requires the RGB image")
    mask = _valid_mask(pred, gt, valid)
    count = int(mask.sum())
    diff = np.where(mask, pred - gt, 0.0)
    absdiff = np.abs(diff)
    sign = np.sign(diff)
    grad = np.zeros_like(pred)

    if kind == "mse":
        value = float((diff * diff)[mask].sum() / count)
        grad[mask] = 2.0 * diff[mask] / count
    elif kind == "l1":
        value = float(absdiff[mask].sum() / count)
        grad[mask] = sign[mask] / count
    elif kind == "logl1":
        value = float(np.log1p(absdiff[mask]).sum() / count)
        grad[mask] = sign[mask] / (1.0 + absdiff[mask]) / count
    elif kind == "huberl1":
        delta = 0.2 * float(absdiff[mask].max())
        if delta <= 0.0:
            return 0.0, grad
        small = absdiff <= delta
        rho = np.where(small, absdiff, (diff * diff + delta * delta) / (2.0 * delta))
        value = float(rho[mask].sum() / count)
        g = np.where(small, sign, diff / delta)
        grad[mask] = g[mask] / count
        # the threshold itself tracks the worst residual; chain through it
        quad = mask & ~small
        d_delta = float(((delta * delta - diff[quad] ** 2)
                         / (2.0 * delta * delta)).sum() / count)
        flat = np.argmax(np.where(mask, absdiff, -1.0))
        iy, ix = np.unravel_index(flat, pred.shape)
        grad[iy, ix] += d_delta * 0.2 * sign[iy, ix]
    elif kind == "dssiml1":
        # windowed term sees gt with invalid pixels replaced by pred so they
        # carry no signal; the substitution is part of the differentiated graph
        win = _fit_window(*pred.shape)
        gt_filled = np.where(mask, gt, pred)
        ssim_val, gx, gy = _ssim_with_grads(pred, gt_filled, win)
        l1_val = float(absdiff[mask].sum() / count)
        value = DSSIM_ALPHA * (1.0 - ssim_val) / 2.0 + (1.0 - DSSIM_ALPHA) * l1_val
        grad = DSSIM_ALPHA * (-0.5) * (gx + np.where(mask, 0.0, gy))
        grad[mask] += (1.0 - DSSIM_ALPHA) * sign[mask] / count
    elif kind == "eas":
        g_rgb = edge_weight(image)
        value = float((g_rgb * absdiff)[mask].sum() / count)
        grad[mask] = (g_rgb * sign)[mask] / count
    else:  # edge-logl1
        g_rgb = edge_weight(image)
        value = float((g_rgb * np.log1p(absdiff))[mask].sum() / count)
        grad[mask] = (g_rgb[mask] * sign[mask]
                      / (1.0 + absdiff[mask])) / count
    return value, grad


def photometric_loss(pred, gt):
    """0.8 * mean-L1 + 0.2 * DSSIM, the standard splatting image loss."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    diff = pred - gt
    l1 = float(np.abs(diff).mean())
    g_l1 = np.sign(diff) / diff.size

    win = _fit_window(pred.shape[0], pred.shape[1])
    ssim_val, gx, _ = _ssim_with_grads(pred, gt, win)
    lam = PHOTOMETRIC_SSIM_WEIGHT
    value = (1.0 - lam) * l1 + lam * (1.0 - ssim_val) / 2.0
    grad = (1.0 - lam) * g_l1 - lam * 0.5 * gx
    return value, grad


def normal_l1_loss(pred, prior, valid=None):
    """Mean over valid pixels of the componentwise L1 gap between composited
    and prior normals; the prediction is deliberately not renormalized."""
    pred = np.asarray(pred, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    if pred.shape != prior.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs prior {prior.shape}")
    mask = np.linalg.norm(prior, axis=2) > 0.5
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != mask.shape:
            raise ShapeMismatch("mask shape mismatch")
        mask &= valid
    if not mask.any():
        raise EmptyMask("no valid pixels for normal loss")
    count = int(mask.sum())
    diff = pred - prior
    value = float(np.abs(diff[mask]).sum() / count)
    grad = np.zeros_like(pred)
    grad[mask] = np.sign(diff[mask]) / count
    return value, grad


def normal_smooth_loss(pred):
    """Total variation of the normal map: componentwise L1 of forward
    differences along both axes, averaged over the pixel count."""
    pred = np.asarray(pred, dtype=np.float64)
    h, w = pred.shape[:2]
    if h < 2 and w < 2:
        raise TooSmall("normal map has no neighboring pixels")
    npix = h * w
    grad = np.zeros_like(pred)
    value = 0.0
    if h >= 2:
        d = pred[1:, :] - pred[:-1, :]
        value += float(np.abs(d).sum())
        s = np.sign(d)
        grad[1:, :] += s
        grad[:-1, :] -= s
    if w >= 2:
        d = pred[:, 1:] - pred[:, :-1]
        value += float(np.abs(d).sum())
        s = np.sign(d)
        grad[:, 1:] += s
        grad[:, :-1] -= s
    return value / npix, grad / npix


def scale_loss(scene: GaussianScene, reduction: str = "mean"):
    """Penalty on each Gaussian's smallest activated scale, pushing
    primitives toward disc-like surfels. Gradient flows only into the
    selected axis."""
    if len(scene) == 0:
        raise EmptyScene("scale loss of empty scene")
    if reduction not in ("mean", "sum"):
        raise ValueError("reduction must be 'mean' or 'sum'")
    k = np.argmin(scene.log_scales, axis=1)
    rows = np.arange(len(scene))
    smin = np.exp(scene.log_scales[rows, k])
    denom = len(scene) if reduction == "mean" else 1
    value = float(smin.sum() / denom)
    grad = np.zeros_like(scene.log_scales)
    grad[rows, k] = smin / denom
    return value, grad


@dataclass(frozen=True)
class LossWeights:
    lambda_d: float = 0.2
    lambda_n: float = 0.1
    lambda_s: float = 0.1


@dataclass
class LossBreakdown:
    """Unweighted component values plus the weighted total."""

    photometric: float
    depth: float
    scale: float
    normal_l1: float
    normal_smooth: float
    total: float
    weights: LossWeights

    def as_dict(self) -> dict:
        return {
            "photometric": self.photometric,
            "depth": self.depth,
            "scale": self.scale,
            "normal_l1": self.normal_l1,
            "normal_smooth": self.normal_smooth,
            "total": self.total,
            "lambda_d": self.weights.lambda_d,
            "lambda_n": self.weights.lambda_n,
            "lambda_s": self.weights.lambda_s,
        }


def frame_depth_target(frame):
    """The frame's metric depth supervision: sensor depth when present, else
    the scale/shift-aligned monocular prior (negative values clamped
    invalid), else None."""
    sensor = getattr(frame, "sensor_depth", None)
    if sensor is not None:
        return sensor
    mono = getattr(frame, "mono_depth", None)
    alignment = getattr(frame, "alignment", None)
    if mono is not None and alignment is not None:
        a, b = alignment
        return np.maximum(np.asarray(mono, dtype=np.float64) * a + b, 0.0)
    return None


def total_loss(buffers, frame, scene: GaussianScene,
               weights: LossWeights = LossWeights(),
               depth_kind: str = "edge-logl1"):
    """Full training objective for one frame.

    Depth and normal terms contribute zero when the frame lacks the
    corresponding prior (the smoothness prior rides with the normal term).
    Returns (breakdown, upstream buffer gradients, gradient w.r.t. the
    scene's log scales).
    """
    from .raster import UpstreamGrads  # local import to avoid a cycle

    h, w = buffers.color.shape[:2]
    upstream = UpstreamGrads.zeros(h, w)

    photo, g_photo = photometric_loss(buffers.color, frame.image)
    upstream.color += g_photo

    depth_val = 0.0
    target = frame_depth_target(frame)
    if target is not None and np.any(target > 0):
        depth_val, g_depth = depth_loss(buffers.depth, target, kind=depth_kind,
                                        image=frame.image)
        upstream.depth += weights.lambda_d * g_depth

    nl1 = 0.0
    smooth = 0.0
    prior = getattr(frame, "normal_prior", None)
    if prior is not None and np.any(np.linalg.norm(prior, axis=2) > 0.5):
        nl1, g_nl1 = normal_l1_loss(buffers.normal, prior)
        smooth, g_smooth = normal_smooth_loss(buffers.normal)
        upstream.normal += weights.lambda_n * g_nl1 + weights.lambda_s * g_smooth

    scale_val, g_scale = scale_loss(scene, reduction="mean")

    total = (photo + weights.lambda_d * depth_val + scale_val
             + weights.lambda_n * nl1 + weights.lambda_s * smooth)
    breakdown = LossBreakdown(photo, depth_val, scale_val, nl1, smooth,
                              total, weights)
    return breakdown, upstream, g_scale
