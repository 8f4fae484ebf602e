"""Training loop: Adam over scene parameters, loss scheduling, and adaptive
density control (periodic culling, duplication, and splitting driven by
opacity and screen-space positional gradients).

Runs are deterministic for a fixed seed: kernels are sequential, frame
order and all density-control sampling come from one seeded generator.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericFailure
from .geometry import init_scene_from_depths
from .losses import LossWeights, total_loss
from .metrics import depth_metrics, psnr, ssim
from .raster import RenderSettings, render, render_backward
from .scene import GaussianScene, save_checkpoint, sigmoid, validate_scene

PARAM_GROUPS = ("mean", "quat", "log_scale", "opacity_logit", "color")

# projection bounds applied after each step, strictly inside the scene
# invariant range (1e-7, 1e3)
LOG_SCALE_MIN = np.log(1e-6)
LOG_SCALE_MAX = np.log(1e2)


@dataclass
class AdcConfig:
    start_iter: int = 500
    end_iter: int | None = None  # None -> half the run
    interval: int = 100
    grad_threshold: float = 2e-4
    cull_opacity: float = 5e-3
    cull_scale_fraction: float = 0.1  # world-size prune, relative to extent
    split_scale_factor: float = 0.01
    split_scale_shrink: float = 1.6
    max_gaussians: int = 200_000
    min_gaussians: int = 16


@dataclass
class TrainConfig:
    iterations: int = 30_000
    lambda_d: float = 0.2
    lambda_n: float = 0.1
    lambda_s: float = 0.1
    depth_kind: str = "edge-logl1"
    lr_mean: float = 1.6e-4       # scaled by scene extent, decayed x0.01
    lr_quat: float = 1e-3
    lr_log_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    lr_final_factor: float = 0.01
    init_points: int = 100_000
    max_scale_fraction: float = 0.3  # per-axis scale cap relative to extent
    seed: int = 0
    eval_every: int = 1000
    adc: AdcConfig = field(default_factory=AdcConfig)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_d, self.lambda_n, self.lambda_s)

    def to_json(self) -> dict:
        doc = {k: v for k, v in self.__dict__.items() if k != "adc"}
        doc["adc"] = dict(self.adc.__dict__)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        adc = AdcConfig(**doc.pop("adc", {}))
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(adc=adc, **known)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    rejected: int = 0
    last_rejected: bool = False

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})

    def remap(self, source: np.ndarray) -> None:
        """Rebuild state rows after density control: survivors keep their
        moments, fresh Gaussians (source < 0) start from zero."""
        keep = source >= 0
        src = source[keep]
        for store in (self.m, self.v):
            for key, arr in store.items():
                new = np.zeros((len(source),) + arr.shape[1:], dtype=arr.dtype)
                new[keep] = arr[src]
                store[key] = new


def adam_step(params: dict, grads: dict, state: AdamState, lrs: dict,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-15) -> AdamState:
    """Bias-corrected Adam update in place; quaternions are renormalized
    after the step. Non-finite gradients reject the whole step (params and
    state untouched, flag set)."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            state.rejected += 1
            state.last_rejected = True
            return state
    state.last_rejected = False
    state.t += 1
    b1t = 1.0 - beta1 ** state.t
    b2t = 1.0 - beta2 ** state.t
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lrs[key] * (m / b1t) / (np.sqrt(v / b2t) + eps)
    if "quat" in params:
        q = params["quat"]
        q /= np.linalg.norm(q, axis=1, keepdims=True)
    if "log_scale" in params:
        np.clip(params["log_scale"], LOG_SCALE_MIN, LOG_SCALE_MAX,
                out=params["log_scale"])
    return state


@dataclass
class AdcReport:
    culled: int = 0
    split: int = 0
    duplicated: int = 0


def _sample_offsets(scene: GaussianScene, idx: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw one offset per selected Gaussian from its own distribution."""
    from .geometry import quat_to_rot

    eps = rng.standard_normal((len(idx), 3))
    out = np.empty((len(idx), 3))
    for row, i in enumerate(idx):
        rot = quat_to_rot(scene.quats[i])
        out[row] = rot @ (np.exp(scene.log_scales[i]) * eps[row])
    return out


def adc_step(scene: GaussianScene, avg_grad_norms: np.ndarray,
             config: AdcConfig, scene_extent: float,
             rng: np.random.Generator):
    """One density-control pass.

    Culls low-opacity Gaussians (never below min_gaussians), duplicates
    small high-gradient Gaussians with a sampled offset, and splits large
    ones into two children with shrunken scales and resampled means.
    Returns (new_scene, report, source_index) where source_index maps new
    rows to their parent (-1 for freshly created rows).
    """
    n = len(scene)
    if len(avg_grad_norms) != n:
        raise ValueError("gradient accumulator length mismatch")
    report = AdcReport()

    opacity = sigmoid(scene.opacity_logits)
    max_scale = np.exp(scene.log_scales).max(axis=1)
    keep = opacity >= config.cull_opacity
    if config.cull_scale_fraction is not None:
        keep &= max_scale <= config.cull_scale_fraction * scene_extent
    if keep.sum() < config.min_gaussians:
        order = np.argsort(opacity)[::-1]
        keep = np.zeros(n, dtype=bool)
        keep[order[:config.min_gaussians]] = True
    report.culled = int(n - keep.sum())
    hot = keep & (avg_grad_norms >= config.grad_threshold)
    small = max_scale < config.split_scale_factor * scene_extent
    clone_mask = hot & small
    split_mask = hot & ~small

    budget = config.max_gaussians - int(keep.sum())
    clone_idx = np.flatnonzero(clone_mask)
    split_idx = np.flatnonzero(split_mask)
    # splits add one net Gaussian, clones add one; trim by gradient magnitude
    if len(clone_idx) + len(split_idx) > max(budget, 0):
        ranked = np.concatenate([clone_idx, split_idx])
        ranked = ranked[np.argsort(avg_grad_norms[ranked])[::-1]]
        allowed = set(ranked[:max(budget, 0)].tolist())
        clone_idx = np.array([i for i in clone_idx if i in allowed], dtype=np.int64)
        split_idx = np.array([i for i in split_idx if i in allowed], dtype=np.int64)

    final_split = np.zeros(n, dtype=bool)
    final_split[split_idx] = True
    survivors = np.flatnonzero(keep & ~final_split)
    sources = [survivors]
    blocks = {
        "means": [scene.means[survivors]],
        "quats": [scene.quats[survivors]],
        "log_scales": [scene.log_scales[survivors]],
        "opacity_logits": [scene.opacity_logits[survivors]],
        "colors": [scene.colors[survivors]],
    }

    if len(clone_idx):
        offsets = _sample_offsets(scene, clone_idx, rng)
        blocks["means"].append(scene.means[clone_idx] + offsets)
        blocks["quats"].append(scene.quats[clone_idx])
        blocks["log_scales"].append(scene.log_scales[clone_idx])
        blocks["opacity_logits"].append(scene.opacity_logits[clone_idx])
        blocks["colors"].append(scene.colors[clone_idx])
        sources.append(np.full(len(clone_idx), -1, dtype=np.int64))
        report.duplicated = len(clone_idx)

    # split parents leave the scene; children sample their means from the
    # parent and shrink every axis
    if len(split_idx):
        shrink = np.log(config.split_scale_shrink)
        for _ in range(2):
            offsets = _sample_offsets(scene, split_idx, rng)
            blocks["means"].append(scene.means[split_idx] + offsets)
            blocks["quats"].append(scene.quats[split_idx])
            blocks["log_scales"].append(scene.log_scales[split_idx] - shrink)
            blocks["opacity_logits"].append(scene.opacity_logits[split_idx])
            blocks["colors"].append(scene.colors[split_idx])
            sources.append(np.full(len(split_idx), -1, dtype=np.int64))
        report.split = len(split_idx)

    new_scene = GaussianScene(
        np.concatenate(blocks["means"]), np.concatenate(blocks["quats"]),
        np.concatenate(blocks["log_scales"]),
        np.concatenate(blocks["opacity_logits"]),
        np.concatenate(blocks["colors"]), scene.background)
    return new_scene, report, np.concatenate(sources)


@dataclass
class TrainLog:
    iterations: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    sink_path: str | None = None
    _sink: object = None

    def _emit(self, record: dict) -> None:
        if self.sink_path is not None:
            if self._sink is None:
                self._sink = open(self.sink_path, "w", encoding="utf-8")
            self._sink.write(json.dumps(record) + "\n")
            self._sink.flush()

    def record_iteration(self, iteration, breakdown, count, wall) -> None:
        rec = {"event": "iteration", "iteration": iteration,
               "num_gaussians": count, "wall_time": wall}
        rec.update(breakdown.as_dict())
        self.iterations.append(rec)
        self._emit(rec)

    def record_eval(self, iteration, metrics: dict) -> None:
        rec = {"event": "eval", "iteration": iteration}
        rec.update(metrics)
        self.evals.append(rec)
        self._emit(rec)

    def close(self) -> None:
        if self._sink is not None:
            self._sink.close()
            self._sink = None


def scene_extent_from_frames(frames, scene: GaussianScene) -> float:
    """Spatial scale for learning rates and density control: the larger of
    the camera spread and the initial scene's half-diagonal (inward-facing
    captures cluster cameras well inside the scene)."""
    centers = np.stack([f.camera.position for f in frames])
    center = centers.mean(axis=0)
    cam_extent = float(np.linalg.norm(centers - center, axis=1).max()) * 1.1
    lo = scene.means.min(axis=0)
    hi = scene.means.max(axis=0)
    scene_extent = float(np.linalg.norm(hi - lo)) * 0.5
    return max(cam_extent, scene_extent, 1e-3)


def evaluate(scene: GaussianScene, frames,
             settings: RenderSettings = RenderSettings()) -> dict:
    """Held-out metrics: mean PSNR/SSIM plus pooled depth errors where
    sensor depth exists."""
    psnrs, ssims = [], []
    d_pred, d_gt = [], []
    for frame in frames:
        buf = render(scene, frame.camera, settings)
        psnrs.append(psnr(buf.color, frame.image))
        if min(frame.image.shape[:2]) >= 11:
            ssims.append(ssim(buf.color, frame.image))
        if frame.sensor_depth is not None:
            d_pred.append(buf.depth.ravel())
            d_gt.append(frame.sensor_depth.ravel())
    out = {"psnr": float(np.mean(psnrs)) if psnrs else None,
           "ssim": float(np.mean(ssims)) if ssims else None}
    if d_gt:
        report = depth_metrics(np.concatenate(d_pred)[None],
                               np.concatenate(d_gt)[None])
        out.update(report.as_dict())
        out["depth_mean_abs"] = float(np.mean(np.abs(
            np.concatenate(d_pred) - np.concatenate(d_gt))))
    return out


def train(train_frames, config: TrainConfig, eval_frames=(),
          seed_scene: GaussianScene | None = None, out_dir=None,
          log_path=None, settings: RenderSettings = RenderSettings()):
    """Optimize a scene against the training frames.

    Initialization back-projects sensor depth when available, otherwise a
    seed scene must be supplied. Frames are visited in seeded random order,
    one frame per iteration. Returns (scene, TrainLog).
    """
    train_frames = list(train_frames)
    if len(train_frames) + len(eval_frames) < 2:
        raise ValueError("need at least 2 frames")
    rng = np.random.default_rng(config.seed)

    if seed_scene is not None:
        scene = seed_scene.copy()
    else:
        scene = init_scene_from_depths(train_frames, config.init_points,
                                       seed=config.seed)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log = TrainLog(sink_path=str(log_path) if log_path else None)

    extent = scene_extent_from_frames(train_frames, scene)
    adc = config.adc
    adc_end = adc.end_iter if adc.end_iter is not None else config.iterations // 2

    def params_of(s):
        return {"mean": s.means, "quat": s.quats, "log_scale": s.log_scales,
                "opacity_logit": s.opacity_logits, "color": s.colors}

    state = AdamState.for_params(params_of(scene))
    acc_grad = np.zeros(len(scene))
    acc_cnt = np.zeros(len(scene), dtype=np.int64)
    order: list[int] = []
    weights = config.weights

    for it in range(1, config.iterations + 1):
        if not order:
            order = list(rng.permutation(len(train_frames)))
        frame = train_frames[order.pop(0)]

        t0 = time.perf_counter()
        buffers = render(scene, frame.camera, settings)
        breakdown, upstream, g_scale = total_loss(
            buffers, frame, scene, weights, config.depth_kind)
        if not np.isfinite(breakdown.total):
            raise NumericFailure(f"non-finite loss at iteration {it}")
        grads = render_backward(scene, frame.camera, buffers, upstream)

        decay = config.lr_final_factor ** (it / config.iterations)
        lrs = {"mean": config.lr_mean * extent * decay,
               "quat": config.lr_quat,
               "log_scale": config.lr_log_scale,
               "opacity_logit": config.lr_opacity,
               "color": config.lr_color}
        grad_dict = {"mean": grads.d_mean, "quat": grads.d_quat,
                     "log_scale": grads.d_log_scale + g_scale,
                     "opacity_logit": grads.d_opacity_logit,
                     "color": grads.d_color}
        adam_step(params_of(scene), grad_dict, state, lrs)
        if config.max_scale_fraction:
            np.minimum(scene.log_scales,
                       np.log(config.max_scale_fraction * extent),
                       out=scene.log_scales)

        seen = grads.projected
        acc_grad[seen] += grads.d_mean2d_norm[seen]
        acc_cnt[seen] += 1

        if (adc.interval > 0 and adc.start_iter <= it <= adc_end
                and it % adc.interval == 0):
            avg = np.where(acc_cnt > 0, acc_grad / np.maximum(acc_cnt, 1), 0.0)
            scene, report, source = adc_step(scene, avg, adc, extent, rng)
            state.remap(source)
            acc_grad = np.zeros(len(scene))
            acc_cnt = np.zeros(len(scene), dtype=np.int64)

        log.record_iteration(it, breakdown, len(scene),
                             time.perf_counter() - t0)

        if config.eval_every and it % config.eval_every == 0:
            if eval_frames:
                log.record_eval(it, evaluate(scene, eval_frames, settings))
            if out_dir is not None:
                save_checkpoint(scene, out_dir / f"checkpoint_{it:06d}.bin")

    report = validate_scene(scene)
    if not report.ok:
        raise NumericFailure(
            f"trained scene violates invariants: {report.violations[:3]}")
    if eval_frames:
        log.record_eval(config.iterations, evaluate(scene, eval_frames, settings))
    if out_dir is not None:
        save_checkpoint(scene, out_dir / "checkpoint_final.bin")
    log.close()
    return scene, log
