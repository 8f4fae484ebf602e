"""Command-line front end for the full pipeline.

Subcommands: synth, train, render, align, extract-points, eval-depth,
eval-mesh, eval-nvs. Exit codes: 0 success, 2 usage error, 3 data error,
4 numeric failure, 5 I/O error. With --json a single JSON document goes to
stdout and diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import errors, pngio
from .align import collect_pairs, fit_scale_shift, write_alignment_cache
from .dataset import load_dataset, split_train_eval
from .geometry import OrientedPointCloud
from .metrics import depth_metrics, mesh_metrics, psnr, sample_mesh, ssim
from .pointset import extract_oriented_points, read_mesh, read_ply, write_ply
from .raster import render
from .scene import load_checkpoint, save_checkpoint
from .synth import BoxScene, SynthNoise, make_dataset
from .trainer import TrainConfig, evaluate, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5

DATA_ERRORS = (errors.DatasetError, errors.ParseError, errors.CheckpointError,
               errors.EmptyScene, errors.EmptyCloud, errors.EmptyMask,
               errors.InsufficientPairs, errors.DegenerateFit,
               errors.NoFaces, errors.DegenerateMesh, errors.TooSmall,
               errors.ShapeMismatch, errors.FixtureError)


def _configure_threads(args) -> None:
    n = args.threads or os.environ.get("DNSPLAT_THREADS")
    if n:
        try:
            import numba
            numba.set_num_threads(max(1, int(n)))
        except (ImportError, ValueError):
            pass


def _emit(args, payload: dict) -> None:
    if args.json:
        json.dump(payload, sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _load_cloud_or_mesh_samples(path, samples: int, seed: int):
    """Sample a mesh file, or pass a point PLY through unchanged."""
    try:
        mesh = read_mesh(path)
    except errors.NoFaces:
        return read_ply(path)
    return sample_mesh(mesh, samples, seed=seed)


def cmd_synth(args) -> int:
    box = BoxScene(half_extents=np.array(args.half_extents),
                   cell_size=args.cell_size, ring_radius=args.ring_radius)
    noise = None
    if args.noise_sigma > 0 or args.edge_corrupt:
        noise = SynthNoise(depth_sigma=args.noise_sigma,
                           edge_corrupt=args.edge_corrupt)
    ids = make_dataset(box, args.views, args.seed, args.out,
                       width=args.width, height=args.height, noise=noise)
    _emit(args, {"frames": len(ids), "out": str(args.out)})
    return EXIT_OK


def _resolve_config(args) -> TrainConfig:
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    config = TrainConfig.from_json(doc)
    for name in ("iterations", "seed", "eval_every", "depth_kind",
                 "init_points"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    for flag, attr in (("lambda_d", "lambda_d"), ("lambda_n", "lambda_n"),
                       ("lambda_s", "lambda_s")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, attr, value)
    return config


def cmd_train(args) -> int:
    frames = load_dataset(args.data, ogl_pose=args.ogl_pose)
    config = _resolve_config(args)
    train_frames, eval_frames = split_train_eval(frames, args.holdout_every) \
        if len(frames) >= args.holdout_every else (frames, [])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene, log = train(train_frames, config, eval_frames=eval_frames,
                       out_dir=out, log_path=out / "log.jsonl")
    final = evaluate(scene, eval_frames or train_frames)
    payload = {"iterations": config.iterations, "num_gaussians": len(scene),
               "checkpoint": str(out / "checkpoint_final.bin")}
    payload.update({k: v for k, v in final.items() if v is not None})
    _emit(args, payload)
    return EXIT_OK


def cmd_render(args) -> int:
    scene = load_checkpoint(args.ckpt, background=args.background)
    frames = load_dataset(args.data, ogl_pose=args.ogl_pose)
    _, eval_frames = split_train_eval(frames, args.holdout_every) \
        if len(frames) >= args.holdout_every else (frames, list(frames))
    if args.split == "all":
        eval_frames = frames
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for frame in eval_frames:
        buf = render(scene, frame.camera)
        stem = frame.frame_id
        pngio.write_color_png(out / f"{stem}_color.png", buf.color)
        pngio.write_depth_png(out / f"{stem}_depth.png", buf.depth)
        pngio.write_normal_png(out / f"{stem}_normal.png",
                               buf.normal_normalized())
        pngio.write_gray_png(out / f"{stem}_alpha.png", buf.alpha)
        written.append(stem)
    _emit(args, {"frames": written, "out": str(out)})
    return EXIT_OK


def cmd_align(args) -> int:
    frames = load_dataset(args.data, ogl_pose=args.ogl_pose)
    rows = []
    for frame in frames:
        if frame.mono_depth is None or frame.sparse_depth is None:
            continue
        pairs = collect_pairs(frame.mono_depth, frame.sparse_depth)
        a, b = fit_scale_shift(pairs)
        clamped = int((frame.mono_depth * a + b < 0).sum())
        rows.append((frame.frame_id, a, b, clamped))
    if not rows:
        raise errors.DatasetError("no frame has both mono and sparse depth")
    write_alignment_cache(args.out, rows)
    _emit(args, {"frames": len(rows), "out": str(args.out)})
    return EXIT_OK


def cmd_extract_points(args) -> int:
    scene = load_checkpoint(args.ckpt, background=args.background)
    frames = load_dataset(args.data, ogl_pose=args.ogl_pose)
    cloud = extract_oriented_points(scene, [f.camera for f in frames],
                                    total=args.total, seed=args.seed)
    write_ply(cloud, args.out)
    _emit(args, {"points": len(cloud), "out": str(args.out)})
    return EXIT_OK


def cmd_eval_depth(args) -> int:
    scene = load_checkpoint(args.ckpt, background=args.background)
    frames = load_dataset(args.data, ogl_pose=args.ogl_pose)
    if args.split != "all" and len(frames) >= args.holdout_every:
        train_f, eval_f = split_train_eval(frames, args.holdout_every)
        frames = eval_f if args.split == "eval" else train_f
    preds, gts = [], []
    for frame in frames:
        if frame.sensor_depth is None:
            continue
        buf = render(scene, frame.camera)
        preds.append(buf.depth.ravel())
        gts.append(frame.sensor_depth.ravel())
    if not gts:
        raise errors.DatasetError("no frame carries sensor depth")
    report = depth_metrics(np.concatenate(preds), np.concatenate(gts))
    _emit(args, report.as_dict())
    return EXIT_OK


def cmd_eval_mesh(args) -> int:
    pred = _load_cloud_or_mesh_samples(args.pred, args.samples, args.seed)
    gt = _load_cloud_or_mesh_samples(args.gt, args.samples, args.seed + 1)
    report = mesh_metrics(pred, gt, tau=args.tau, norm=args.mesh_norm)
    _emit(args, report.as_dict())
    return EXIT_OK


def cmd_eval_nvs(args) -> int:
    scene = load_checkpoint(args.ckpt, background=args.background)
    frames = load_dataset(args.data, ogl_pose=args.ogl_pose)
    if args.split != "all" and len(frames) >= args.holdout_every:
        train_f, eval_f = split_train_eval(frames, args.holdout_every)
        frames = eval_f if args.split == "eval" else train_f
    per_frame = {}
    for frame in frames:
        buf = render(scene, frame.camera)
        entry = {"psnr": psnr(buf.color, frame.image)}
        if min(frame.image.shape[:2]) >= 11:
            entry["ssim"] = ssim(buf.color, frame.image)
        per_frame[frame.frame_id] = entry
    payload = {"psnr": float(np.mean([e["psnr"] for e in per_frame.values()])),
               "frames": per_frame}
    ssims = [e["ssim"] for e in per_frame.values() if "ssim" in e]
    if ssims:
        payload["ssim"] = float(np.mean(ssims))
    _emit(args, payload)
    return EXIT_OK


def _add_common(p, data=False, ckpt=False, split=False):
    p.add_argument("--json", action="store_true",
                   help="emit a single JSON document on stdout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="cap internal parallelism (default: all cores)")
    if data:
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--ogl-pose", action="store_true",
                       help="poses use the flipped (OpenGL) axis convention")
        p.add_argument("--holdout-every", type=int, default=8,
                       help="every n-th frame goes to the eval split")
    if ckpt:
        p.add_argument("--ckpt", required=True, help="scene checkpoint")
        p.add_argument("--background", type=float, nargs=3,
                       default=(0.0, 0.0, 0.0))
    if split:
        p.add_argument("--split", choices=("eval", "train", "all"),
                       default="eval")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnsplat",
        description="Depth- and normal-regularized Gaussian splatting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic box dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--half-extents", type=float, nargs=3,
                   default=(1.2, 1.0, 0.9))
    p.add_argument("--cell-size", type=float, default=0.5)
    p.add_argument("--ring-radius", type=float, default=0.45)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--edge-corrupt", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="optimize a scene on a dataset")
    _add_common(p, data=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file mirroring the train config")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    p.add_argument("--init-points", dest="init_points", type=int, default=None)
    p.add_argument("--depth-kind", dest="depth_kind", default=None,
                   choices=("mse", "l1", "logl1", "huberl1", "dssiml1",
                            "eas", "edge-logl1"))
    p.add_argument("--lambda-d", dest="lambda_d", type=float, default=None)
    p.add_argument("--lambda-n", dest="lambda_n", type=float, default=None)
    p.add_argument("--lambda-s", dest="lambda_s", type=float, default=None)
    p.set_defaults(func=cmd_train, seed=None)

    p = sub.add_parser("render", help="render checkpoint views to PNGs")
    _add_common(p, data=True, ckpt=True, split=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("align", help="fit per-frame mono-to-sparse depth "
                                     "scale/shift and write the cache")
    _add_common(p, data=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("extract-points",
                       help="extract an oriented point set for meshing")
    _add_common(p, data=True, ckpt=True)
    p.add_argument("--out", required=True)
    p.add_argument("--total", type=int, default=2_000_000)
    p.set_defaults(func=cmd_extract_points)

    p = sub.add_parser("eval-depth", help="depth metrics against sensor depth")
    _add_common(p, data=True, ckpt=True, split=True)
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("eval-mesh", help="mesh metrics between two files")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=2_000_000)
    p.add_argument("--mesh-norm", choices=("l1", "l2"), default="l1")
    p.set_defaults(func=cmd_eval_mesh)

    p = sub.add_parser("eval-nvs", help="PSNR/SSIM on held-out views")
    _add_common(p, data=True, ckpt=True, split=True)
    p.set_defaults(func=cmd_eval_nvs)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_threads(args)
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except errors.NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
