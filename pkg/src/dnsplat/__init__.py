"""Depth- and normal-regularized Gaussian splatting on the CPU."""

__version__ = "0.1.0"

from .scene import (Camera, Gaussian, GaussianScene, RenderBuffers,
                    load_checkpoint, save_checkpoint, scene_aabb,
                    validate_scene)
from .raster import (RenderSettings, SceneGrads, Splat2D, UpstreamGrads,
                     project_gaussian, render, render_backward)
from .geometry import (OrientedPointCloud, backproject, estimate_normals,
                       gaussian_normal, init_scene_from_depths, orient_normal,
                       quat_to_rot)

__all__ = [
    "Camera", "Gaussian", "GaussianScene", "RenderBuffers",
    "load_checkpoint", "save_checkpoint", "scene_aabb", "validate_scene",
    "RenderSettings", "SceneGrads", "Splat2D", "UpstreamGrads",
    "project_gaussian", "render", "render_backward",
    "OrientedPointCloud", "backproject", "estimate_normals",
    "gaussian_normal", "init_scene_from_depths", "orient_normal",
    "quat_to_rot",
]
