"""Differentiable forward rendering of color, z-depth, normal, and alpha via
global-sort alpha compositing, with an analytic reverse pass.

Splats are sorted once per frame by ascending view-space z (no per-pixel
resort); the backward pass treats sort order, the termination set, and the
argmin-axis selection as locally constant, consistent with the forward
discontinuities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateCovariance, ShapeMismatch
from .scene import Camera, GaussianScene, RenderBuffers


@dataclass(frozen=True)
class RenderSettings:
    """Rasterizer constants.

    lowpass is the anti-aliasing floor added to both diagonal entries of the
    2D covariance (px^2). alpha_clamp bounds per-splat blending; set it to
    1.0 to disable clamping (forward-only use). Compositing stops once
    transmittance drops below t_termination; depth is normalized by the
    accumulated alpha only where it exceeds alpha_eps. Contributions with
    blending coefficient below alpha_min are dropped, and each splat is
    rasterized out to the radius where its coefficient reaches alpha_min.
    """

    lowpass: float = 0.3
    near: float = 0.01
    alpha_clamp: float = 0.99
    t_termination: float = 1e-4
    alpha_eps: float = 1e-3
    alpha_min: float = 1e-12


DEFAULT_SETTINGS = RenderSettings()


@dataclass
class Splat2D:
    """A Gaussian projected into screen space."""

    mean2d: np.ndarray      # pixels
    conic: np.ndarray       # (a, b, c): upper triangle of inverse 2D covariance
    radius: float           # 3-sigma extent, pixels
    z: float                # view-space z-depth, meters
    cam_normal: np.ndarray  # camera-space normal, flipped toward the camera
    color: np.ndarray
    opacity: float
    source_index: int


@dataclass
class SceneGrads:
    """Per-Gaussian gradients matching every optimizable field.

    projected marks Gaussians that survived culling for this view;
    d_mean2d_norm carries the screen-space positional gradient magnitude
    used by adaptive density control.
    """

    d_mean: np.ndarray
    d_quat: np.ndarray
    d_log_scale: np.ndarray
    d_opacity_logit: np.ndarray
    d_color: np.ndarray
    d_mean2d_norm: np.ndarray = None
    projected: np.ndarray = None


@dataclass
class UpstreamGrads:
    """Per-pixel loss gradients with respect to the render buffers."""

    color: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    alpha: np.ndarray

    @classmethod
    def zeros(cls, height: int, width: int) -> "UpstreamGrads":
        return cls(np.zeros((height, width, 3)), np.zeros((height, width)),
                   np.zeros((height, width, 3)), np.zeros((height, width)))


def _project_arrays(scene: GaussianScene, cam: Camera, settings: RenderSettings):
    out = _kernels.project_kernel(
        scene.means, scene.quats, scene.log_scales, scene.opacity_logits,
        scene.colors, np.ascontiguousarray(cam.world_to_cam_rotation),
        np.ascontiguousarray(cam.position), cam.fx, cam.fy, cam.cx, cam.cy,
        cam.width, cam.height, settings.lowpass, settings.alpha_min,
        settings.near)
    valid, degenerate = out[0], out[1]
    if np.any(degenerate):
        idx = int(np.flatnonzero(degenerate)[0])
        raise DegenerateCovariance(
            f"2D covariance not invertible for Gaussian {idx}")
    return out


def _sorted_order(valid, mean2d, zs, opa, col):
    """Content-determined ascending-z order so rendering is invariant to the
    input order of the scene."""
    idx = np.flatnonzero(valid)
    keys = (col[idx, 2], col[idx, 1], col[idx, 0], opa[idx],
            mean2d[idx, 1], mean2d[idx, 0], zs[idx])
    return idx[np.lexsort(keys)]


def project_gaussian(gaussian, cam: Camera, lowpass: float = 0.3,
                     source_index: int = 0,
                     settings: RenderSettings | None = None) -> Splat2D | None:
    """Project one Gaussian; returns None when it is culled (behind the near
    plane or its 3-sigma disk misses the image rectangle)."""
    if settings is None:
        settings = RenderSettings(lowpass=lowpass)
    scene = GaussianScene(gaussian.mean[None], gaussian.quat[None],
                          gaussian.log_scale[None], [gaussian.opacity_logit],
                          gaussian.color[None])
    (valid, _deg, mean2d, conic, rad3, _covrad, zs, ncam, opa,
     col) = _project_arrays(scene, cam, settings)
    if not valid[0]:
        return None
    return Splat2D(mean2d[0].copy(), conic[0].copy(), float(rad3[0]),
                   float(zs[0]), ncam[0].copy(), col[0].copy(),
                   float(opa[0]), source_index)


def render(scene: GaussianScene, cam: Camera,
           settings: RenderSettings = DEFAULT_SETTINGS) -> RenderBuffers:
    """Forward render a scene into color/depth/normal/alpha buffers."""
    (valid, _deg, mean2d, conic, _rad3, covrad, zs, ncam, opa,
     col) = _project_arrays(scene, cam, settings)
    order = _sorted_order(valid, mean2d, zs, opa, col)

    color, rawd, nrm, abuf, tfin, vis_total, vis_contrib = \
        _kernels.composite_forward(
            np.ascontiguousarray(mean2d[order]),
            np.ascontiguousarray(conic[order]),
            np.ascontiguousarray(covrad[order]),
            np.ascontiguousarray(zs[order]),
            np.ascontiguousarray(ncam[order]),
            np.ascontiguousarray(opa[order]),
            np.ascontiguousarray(col[order]),
            cam.height, cam.width, settings.alpha_clamp,
            settings.t_termination, settings.alpha_min)

    color += tfin[:, :, None] * scene.background
    depth = np.zeros_like(rawd)
    covered = abuf > settings.alpha_eps
    np.divide(rawd, abuf, out=depth, where=covered)
    return RenderBuffers(color=color, depth=depth, normal=nrm, alpha=abuf,
                         raw_depth=rawd, transmittance=tfin,
                         vis_total=vis_total, vis_contrib=vis_contrib,
                         settings=settings, scene_size=len(scene))


def render_backward(scene: GaussianScene, cam: Camera, buffers: RenderBuffers,
                    upstream: UpstreamGrads) -> SceneGrads:
    """Exact reverse-mode gradient of the forward compositing as implemented.

    buffers must come from :func:`render` on the same scene and camera; the
    projection and global sort are recomputed deterministically.
    """
    if buffers.transmittance is None or buffers.vis_total is None:
        raise ValueError("buffers lack forward internals; use render() output")
    if buffers.scene_size != len(scene):
        raise ShapeMismatch("buffers were rendered from a different scene")
    h, w = cam.height, cam.width
    if (upstream.color.shape != (h, w, 3) or upstream.depth.shape != (h, w) or
            upstream.normal.shape != (h, w, 3) or upstream.alpha.shape != (h, w)):
        raise ShapeMismatch("upstream gradient shapes do not match the camera")
    if buffers.color.shape != (h, w, 3):
        raise ShapeMismatch("buffer shapes do not match the camera")

    settings: RenderSettings = buffers.settings
    (valid, _deg, mean2d, conic, _rad3, covrad, zs, ncam, opa,
     col) = _project_arrays(scene, cam, settings)
    order = _sorted_order(valid, mean2d, zs, opa, col)

    # fold the depth normalization (depth = raw / alpha above the gate) into
    # effective upstreams for the raw depth sum and the alpha buffer
    covered = buffers.alpha > settings.alpha_eps
    u_r = np.zeros((h, w))
    np.divide(upstream.depth, buffers.alpha, out=u_r, where=covered)
    u_a = upstream.alpha.astype(np.float64).copy()
    u_a[covered] -= (upstream.depth[covered] * buffers.raw_depth[covered]
                     / buffers.alpha[covered] ** 2)

    g_mean2d_s, g_conic_s, g_opa_s, g_col_s, g_z_s, g_n_s = \
        _kernels.composite_backward(
            np.ascontiguousarray(mean2d[order]),
            np.ascontiguousarray(conic[order]),
            np.ascontiguousarray(covrad[order]),
            np.ascontiguousarray(zs[order]),
            np.ascontiguousarray(ncam[order]),
            np.ascontiguousarray(opa[order]),
            np.ascontiguousarray(col[order]),
            buffers.transmittance, buffers.vis_total, buffers.vis_contrib,
            np.ascontiguousarray(upstream.color, dtype=np.float64), u_r,
            np.ascontiguousarray(upstream.normal, dtype=np.float64), u_a,
            scene.background, settings.alpha_clamp, settings.t_termination,
            settings.alpha_min)

    n = len(scene)
    g_mean2d = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opa = np.zeros(n)
    g_col = np.zeros((n, 3))
    g_z = np.zeros(n)
    g_n = np.zeros((n, 3))
    g_mean2d[order] = g_mean2d_s
    g_conic[order] = g_conic_s
    g_opa[order] = g_opa_s
    g_col[order] = g_col_s
    g_z[order] = g_z_s
    g_n[order] = g_n_s

    d_mean, d_quat, d_ls, d_logit, d_color = _kernels.unproject_backward(
        scene.means, scene.quats, scene.log_scales, scene.opacity_logits,
        scene.colors, valid, g_mean2d, g_conic, g_opa, g_col, g_z, g_n,
        np.ascontiguousarray(cam.world_to_cam_rotation),
        np.ascontiguousarray(cam.position), cam.fx, cam.fy, settings.lowpass)

    return SceneGrads(d_mean=d_mean, d_quat=d_quat, d_log_scale=d_ls,
                      d_opacity_logit=d_logit, d_color=d_color,
                      d_mean2d_norm=np.linalg.norm(g_mean2d, axis=1),
                      projected=valid)
