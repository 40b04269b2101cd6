"""Task-level prediction: arbitrary-time queries, block-wise rollout past the
training window, best-of-N sampling, and dataset evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datagen import DatasetManifest, SplitParams, TaskSplit, VideoClip, split_indices
from .metrics import MetricReport, psnr, report, ssim
from .model import VideoPredictionModel
from .predictor import sample_event

_TIME_EPS = 1e-9


@dataclass
class PredictionRequest:
    """Context (frame, time) pairs plus the raw times to predict at.

    Times are in raw units (frame indices of the training window) and may be
    non-integer; every time must lie inside [0, clip_len - 1]. ``mode`` is
    "deterministic" (event = prior mean) or "sample".
    """

    context_frames: np.ndarray
    context_times: list[float]
    target_times: list[float]
    mode: str = "deterministic"
    num_samples: int = 1
    seed: int | None = None

    def __post_init__(self):
        self.context_frames = np.asarray(self.context_frames, dtype=np.float32)
        if self.context_frames.ndim != 4 or self.context_frames.shape[0] < 1:
            raise ValueError("context_frames must be a nonempty (L_C, h, w, c) array")
        self.context_times = [float(t) for t in self.context_times]
        self.target_times = [float(t) for t in self.target_times]
        if len(self.context_times) != self.context_frames.shape[0]:
            raise ValueError("one context time per context frame is required")
        if not self.target_times:
            raise ValueError("target_times must be nonempty")
        if self.mode not in ("deterministic", "sample"):
            raise ValueError(f"mode must be 'deterministic' or 'sample', got {self.mode!r}")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")


@dataclass
class PredictionResult:
    frames: np.ndarray  # (N, L_T, h, w, c), values in [0, 1]
    events: np.ndarray  # (N, H, W, D) event samples actually used
    target_times: list[float]
    mode: str
    seed: int | None


@dataclass
class RolloutResult:
    frames: np.ndarray  # (horizon, h, w, c)
    block_count: int
    block_sizes: list[int] = field(default_factory=list)


@dataclass
class BestOfN:
    best_index: int
    best_frames: np.ndarray
    scores: list[float]
    metric: str


def _check_window(model: VideoPredictionModel, times, what: str) -> None:
    horizon = model.cfg.clip_len - 1
    for t in times:
        if t < -_TIME_EPS or t > horizon + _TIME_EPS:
            raise ValueError(
                f"{what} time {t} is outside the training window [0, {horizon}]; "
                "use rollout_vfp for queries beyond the window"
            )


@torch.no_grad()
def predict(req: PredictionRequest, model: VideoPredictionModel) -> PredictionResult:
    """Encode the context once, then decode ``num_samples`` event draws.

    Deterministic mode uses the prior mean for every sample, so repeated
    samples are identical; sample mode draws one event per sample from the
    context prior.
    """
    _check_window(model, req.context_times, "context")
    _check_window(model, req.target_times, "target")
    model.eval()

    frames = torch.from_numpy(req.context_frames)
    y_c = model.autoencoder.encode(frames)
    x_c = model.encode_times(req.context_times)
    x_t = model.encode_times(req.target_times)

    memory = model.predictor.encode_context(x_c, y_c)
    prior = model.predictor.event_distribution(memory, "context")

    generator = None
    if req.mode == "sample":
        generator = torch.Generator()
        generator.manual_seed(req.seed if req.seed is not None else torch.seed() % (2**63))

    out_frames, out_events = [], []
    for _ in range(req.num_samples):
        event = sample_event(prior, deterministic=req.mode == "deterministic", generator=generator)
        y_hat = model.predictor.decode_targets(x_t, x_c, memory, event)
        decoded = model.autoencoder.decode(y_hat)
        out_frames.append(decoded.numpy())
        out_events.append(event.numpy())

    return PredictionResult(
        frames=np.stack(out_frames),
        events=np.stack(out_events),
        target_times=list(req.target_times),
        mode=req.mode,
        seed=req.seed,
    )


def rollout_vfp(
    context_frames: np.ndarray,
    horizon: int,
    block_len: int,
    model: VideoPredictionModel,
    mode: str = "deterministic",
    seed: int | None = None,
) -> RolloutResult:
    """Predict ``horizon`` future frames block by block.

    Each block re-windows: the most recent context frames take times
    0..L_C-1 and the block's targets L_C..L_C+b-1, keeping every query
    inside the trained coordinate range. Predicted frames become context
    for the next block.
    """
    context_frames = np.asarray(context_frames, dtype=np.float32)
    if context_frames.ndim != 4 or context_frames.shape[0] < 1:
        raise ValueError("context_frames must be a nonempty (L_C, h, w, c) array")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    num_context = context_frames.shape[0]
    max_block = model.cfg.clip_len - num_context
    if block_len < 1 or block_len > max_block:
        raise ValueError(
            f"block_len must lie in [1, {max_block}] for {num_context} context frames "
            f"and a window of {model.cfg.clip_len}"
        )

    history = list(context_frames)
    produced = 0
    block_sizes: list[int] = []
    while produced < horizon:
        size = min(block_len, horizon - produced)
        request = PredictionRequest(
            context_frames=np.stack(history[-num_context:]),
            context_times=list(range(num_context)),
            target_times=[num_context + i for i in range(size)],
            mode=mode,
            num_samples=1,
            seed=None if seed is None else seed + len(block_sizes),
        )
        result = predict(request, model)
        history.extend(result.frames[0])
        produced += size
        block_sizes.append(size)

    frames = np.stack(history[num_context:])
    return RolloutResult(frames=frames, block_count=len(block_sizes), block_sizes=block_sizes)


def best_of_n(
    req: PredictionRequest,
    ground_truth: np.ndarray,
    model: VideoPredictionModel,
    metric: str = "psnr",
) -> BestOfN:
    """Score every sample against the ground truth (metric averaged over
    target frames) and return the best one plus all scores."""
    if metric not in ("psnr", "ssim"):
        raise ValueError(f"metric must be 'psnr' or 'ssim', got {metric!r}")
    ground_truth = np.asarray(ground_truth)
    if ground_truth.shape[0] != len(req.target_times):
        raise ValueError(
            f"ground truth has {ground_truth.shape[0]} frames for {len(req.target_times)} target times"
        )
    result = predict(req, model)
    score_fn = psnr if metric == "psnr" else ssim
    scores = [
        float(np.mean([score_fn(sample[i], ground_truth[i]) for i in range(len(req.target_times))]))
        for sample in result.frames
    ]
    best = int(np.argmax(scores))
    return BestOfN(best_index=best, best_frames=result.frames[best], scores=scores, metric=metric)


def nearest_context_baseline(
    context_frames: np.ndarray, context_times, target_times
) -> np.ndarray:
    """Copy the temporally nearest context frame to each target time
    (earlier frame on ties); the trivial baseline every model must beat."""
    context_frames = np.asarray(context_frames)
    context_times = np.asarray(context_times, dtype=np.float64)
    out = []
    for t in target_times:
        idx = int(np.argmin(np.abs(context_times - t)))
        out.append(context_frames[idx])
    return np.stack(out)


@dataclass
class EvalOutcome:
    report: MetricReport
    best_scores: list[float]
    all_scores: list[list[float]]
    task: str
    metric: str

    @property
    def mean_best(self) -> float:
        return float(np.mean(self.best_scores))


def evaluate_split(
    model: VideoPredictionModel,
    clip: VideoClip,
    split: TaskSplit,
    num_samples: int = 1,
    metric: str = "psnr",
    mode: str = "deterministic",
    seed: int | None = None,
) -> BestOfN:
    """Best-of-N on one clip under a given context/target split."""
    ctx, tgt = split.context_idx, split.target_idx
    request = PredictionRequest(
        context_frames=clip.frames[ctx],
        context_times=[float(clip.times[i]) for i in ctx],
        target_times=[float(clip.times[i]) for i in tgt],
        mode=mode,
        num_samples=num_samples,
        seed=seed,
    )
    return best_of_n(request, clip.frames[tgt], model, metric=metric)


def evaluate_manifest(
    model: VideoPredictionModel,
    dataset: DatasetManifest,
    task: str,
    params: SplitParams | None = None,
    num_samples: int = 1,
    metric: str = "psnr",
    mode: str = "sample",
    seed: int = 0,
    max_clips: int | None = None,
    out_dir: str | Path | None = None,
) -> EvalOutcome:
    """Best-of-N evaluation over a dataset; per-frame metrics come from each
    clip's best sample. Writes CSV/JSON when ``out_dir`` is given."""
    clips = dataset.clips[:max_clips] if max_clips else dataset.clips
    if not clips:
        raise ValueError("evaluation dataset is empty")

    best_frames, gt_frames, frame_times = [], [], []
    best_scores, all_scores = [], []
    for i, clip in enumerate(clips):
        split = split_indices(clip.num_frames, task, params, np.random.default_rng([seed, i]))
        outcome = evaluate_split(
            model, clip, split, num_samples=num_samples, metric=metric, mode=mode, seed=seed + i
        )
        best_scores.append(outcome.scores[outcome.best_index])
        all_scores.append(outcome.scores)
        best_frames.append(outcome.best_frames)
        gt_frames.append(clip.frames[split.target_idx])
        frame_times.append([float(clip.times[j]) for j in split.target_idx])

    rep = report(best_frames, gt_frames, frame_times, out_dir=out_dir, stem="eval")
    return EvalOutcome(
        report=rep, best_scores=best_scores, all_scores=all_scores, task=task, metric=metric
    )
