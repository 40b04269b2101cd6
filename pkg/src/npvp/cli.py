"""Command-line interface: gen-data, train, predict, eval.

Exit codes: 0 success, 1 runtime failure (I/O, missing files, geometry
mismatches), 2 usage or config errors. Flags override config-file values.
When ``--out`` is omitted the NPVP_OUT environment variable is used as the
output root. All inputs are validated before any output is written.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, TrainConfig, load_train_config
from .datagen import (
    DataError,
    SplitError,
    SplitParams,
    gen_moving_shapes,
    load_frame_folder,
    save_frame_png,
    split_indices,
)
from .inference import PredictionRequest, evaluate_manifest, predict
from .metrics import psnr, render_metric_figure, ssim
from .model import model_from_checkpoint
from .training import train_autoencoder, train_predictor

logger = logging.getLogger("npvp.cli")


class UsageError(Exception):
    """Bad flag combination or value; maps to exit code 2."""


def _resolve_out(value: str | None) -> Path:
    if value:
        return Path(value)
    root = os.environ.get("NPVP_OUT")
    if root:
        return Path(root)
    raise UsageError("--out is required (or set NPVP_OUT as the default output root)")


def _parse_times(text: str, flag: str) -> list[float]:
    try:
        values = [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"{flag} expects a comma-separated list of numbers: {exc}") from exc
    if not values:
        raise UsageError(f"{flag} must list at least one time")
    return values


def _save_frame_grid(frames: np.ndarray, path: Path, cols: int = 10, pad: int = 2) -> None:
    """Tile frames row-major into one PNG."""
    n, h, w, c = frames.shape
    cols = min(cols, n)
    rows = (n + cols - 1) // cols
    grid = np.ones((rows * h + (rows - 1) * pad, cols * w + (cols - 1) * pad, c), dtype=np.float32)
    for i in range(n):
        r, col = divmod(i, cols)
        y, x = r * (h + pad), col * (w + pad)
        grid[y : y + h, x : x + w] = frames[i]
    save_frame_png(path, np.clip(grid, 0.0, 1.0))


def _cmd_gen_data(args) -> int:
    out = _resolve_out(args.out)
    if args.clips < 1:
        raise UsageError("--clips must be >= 1")
    if args.len < 2:
        raise UsageError("--len must be >= 2")
    if args.size < 16:
        raise UsageError("--size must be >= 16")
    if args.shapes < 1:
        raise UsageError("--shapes must be >= 1")
    manifest = gen_moving_shapes(
        out, args.clips, args.len, args.size, args.shapes, args.seed, fps=args.fps
    )
    manifest_path = Path(manifest.root) / "manifest.json"
    print(manifest_path)
    return 0


def _load_cfg_with_overrides(args, stage: str) -> TrainConfig:
    if args.config:
        cfg = load_train_config(args.config)
    else:
        cfg = TrainConfig(stage=stage)
    overrides = {"stage": stage}
    for flag, name in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("seed", "seed"),
        ("task", "task"),
        ("beta", "beta"),
        ("gamma", "gamma"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    try:
        return dataclasses.replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_train(args) -> int:
    stage = {"ae": "autoencoder", "predictor": "predictor"}[args.stage]
    cfg = _load_cfg_with_overrides(args, stage)
    out = _resolve_out(args.out)
    if stage == "predictor" and not args.ae_ckpt:
        raise UsageError("--ae-ckpt is required for --stage predictor")
    data_path = Path(args.data)
    if not data_path.is_dir():
        raise UsageError(f"--data directory {data_path} does not exist")

    if args.dry_run:
        print(f"config ok: stage={cfg.stage} epochs={cfg.epochs} task={cfg.task}")
        return 0

    dataset = load_frame_folder(data_path)
    if stage == "autoencoder":
        train_autoencoder(dataset, cfg, out)
        print(out / "ae.ckpt")
    else:
        ae_ckpt = load_checkpoint(args.ae_ckpt)
        train_predictor(dataset, ae_ckpt, cfg, out)
        print(out / "predictor.ckpt")
    return 0


def _task_split_params(args, length: int) -> SplitParams:
    return SplitParams(
        past_frames=args.p,
        future_frames=args.f,
        mid_frames=args.k,
        lc_range=(args.lc_min, args.lc_max),
    )


def _cmd_predict(args) -> int:
    if args.deterministic and args.samples > 1:
        raise UsageError("--deterministic contradicts --samples > 1")
    out = _resolve_out(args.out)
    mode = "deterministic" if args.deterministic else "sample"

    model = model_from_checkpoint(args.ckpt)
    dataset = load_frame_folder(args.data)
    if not 0 <= args.clip < dataset.num_clips:
        raise UsageError(f"--clip {args.clip} out of range for {dataset.num_clips} clips")
    clip = dataset.clips[args.clip]
    window = model.cfg.clip_len
    if clip.num_frames < window and args.task != "custom":
        raise ValueError(
            f"clip has {clip.num_frames} frames but the model window is {window}"
        )

    if args.task == "custom":
        target_times = _parse_times(args.target_times, "--target-times")
        if args.context_times:
            context_times = _parse_times(args.context_times, "--context-times")
        else:
            context_times = [float(t) for t in range(min(clip.num_frames, window))]
        context_idx = []
        for t in context_times:
            if abs(t - round(t)) > 1e-9 or not 0 <= round(t) < clip.num_frames:
                raise UsageError(
                    f"context time {t} does not name a frame of the clip (0..{clip.num_frames - 1})"
                )
            context_idx.append(int(round(t)))
        context_frames = clip.frames[context_idx]
    else:
        split = split_indices(window, args.task, _task_split_params(args, window), np.random.default_rng(args.seed))
        context_frames = clip.frames[split.context_idx]
        context_times = [float(i) for i in split.context_idx]
        target_times = [float(i) for i in split.target_idx]

    request = PredictionRequest(
        context_frames=context_frames,
        context_times=context_times,
        target_times=target_times,
        mode=mode,
        num_samples=args.samples,
        seed=args.seed,
    )
    result = predict(request, model)

    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, sample in enumerate(result.frames):
        path = out / f"sample_{i:02d}.png"
        _save_frame_grid(sample, path)
        files.append(path.name)

    # per-sample metrics when every target time names a real frame of the clip
    metrics = None
    if all(abs(t - round(t)) < 1e-9 and 0 <= round(t) < clip.num_frames for t in target_times):
        gt = clip.frames[[int(round(t)) for t in target_times]]
        metrics = [
            {
                "psnr": float(np.mean([psnr(s[j], gt[j]) for j in range(len(target_times))])),
                "ssim": float(np.mean([ssim(s[j], gt[j]) for j in range(len(target_times))])),
            }
            for s in result.frames
        ]

    sidecar = {
        "task": args.task,
        "mode": mode,
        "seed": args.seed,
        "clip": args.clip,
        "context_times": context_times,
        "target_times": target_times,
        "num_samples": args.samples,
        "files": files,
        "per_sample_metrics": metrics,
    }
    (out / "prediction.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(out / "prediction.json")
    return 0


def _cmd_eval(args) -> int:
    if args.deterministic and args.samples > 1:
        raise UsageError("--deterministic contradicts --samples > 1")
    out = _resolve_out(args.out)
    model = model_from_checkpoint(args.ckpt)
    dataset = load_frame_folder(args.data)
    if args.max_clips is not None and args.max_clips < 1:
        raise UsageError("--max-clips must be >= 1")

    params = _task_split_params(args, model.cfg.clip_len)
    outcome = evaluate_manifest(
        model,
        dataset,
        task=args.task,
        params=params,
        num_samples=args.samples,
        metric=args.metric,
        mode="deterministic" if args.deterministic else "sample",
        seed=args.seed,
        max_clips=args.max_clips,
        out_dir=out,
    )
    render_metric_figure(outcome.report, out / "eval_curves.png")

    print(f"task={args.task} metric={args.metric} samples={args.samples}")
    print("clip  best_" + args.metric)
    for i, score in enumerate(outcome.best_scores):
        print(f"{i:4d}  {score:.4f}")
    print(f"mean  {outcome.mean_best:.4f}")
    print(
        f"aggregate: psnr={outcome.report.aggregate_psnr:.4f} "
        f"ssim={outcome.report.aggregate_ssim:.4f}"
    )
    print(out / "eval.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npvp",
        description="Continuous conditional video prediction: data generation, training, prediction, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic bouncing-shape dataset")
    p.add_argument("--clips", type=int, required=True, help="number of clips")
    p.add_argument("--len", type=int, required=True, help="frames per clip")
    p.add_argument("--size", type=int, required=True, help="frame side length in pixels")
    p.add_argument("--shapes", type=int, default=2, help="shapes per clip")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=10.0, help="frame-rate metadata")
    p.add_argument("--out", help="output directory (default: $NPVP_OUT)")
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("train", help="train the autoencoder or the predictor")
    p.add_argument("--stage", choices=("ae", "predictor"), required=True)
    p.add_argument("--config", help="JSON config file mirroring TrainConfig")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--ae-ckpt", help="autoencoder checkpoint (predictor stage)")
    p.add_argument("--out", help="output directory (default: $NPVP_OUT)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=("vfp", "vfi", "vpe", "vrc"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--dry-run", action="store_true", help="validate config and exit")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("predict", help="predict frames for one clip")
    p.add_argument("--ckpt", required=True, help="full model checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--clip", type=int, default=0, help="clip index")
    p.add_argument("--task", choices=("vfp", "vfi", "vpe", "vrc", "custom"), required=True)
    p.add_argument("--p", type=int, help="past frames (context for vfp/vfi, targets for vpe)")
    p.add_argument("--f", type=int, help="future frames (targets for vfp, context for vfi/vpe)")
    p.add_argument("--k", type=int, help="intermediate target frames (vfi)")
    p.add_argument("--lc-min", type=int, default=4, dest="lc_min", help="vrc context minimum")
    p.add_argument("--lc-max", type=int, default=16, dest="lc_max", help="vrc context maximum")
    p.add_argument("--context-times", dest="context_times", help="custom: comma-separated frame times")
    p.add_argument("--target-times", dest="target_times", help="custom: comma-separated query times")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: $NPVP_OUT)")
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("eval", help="best-of-N evaluation over a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=("vfp", "vfi", "vpe", "vrc"), required=True)
    p.add_argument("--p", type=int)
    p.add_argument("--f", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--lc-min", type=int, default=4, dest="lc_min")
    p.add_argument("--lc-max", type=int, default=16, dest="lc_max")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--metric", choices=("psnr", "ssim"), default="psnr")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-clips", type=int, dest="max_clips")
    p.add_argument("--out", help="output directory (default: $NPVP_OUT)")
    p.set_defaults(handler=_cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (UsageError, ConfigError, SplitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
