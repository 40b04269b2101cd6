"""Two-stage training: the frame autoencoder first, then the predictor with
the autoencoder frozen.

Predictor training runs in two phases: a deterministic warm-up (event = prior
mean, no KL) followed by the stochastic phase (posterior sampling, KL active).
Batch and split randomness is keyed by (seed, step), so a run is a pure
function of (seed, config, dataset) and loss curves reproduce exactly.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .checkpoint import (
    Checkpoint,
    SCOPE_AUTOENCODER,
    SCOPE_FULL,
    collect_module_state,
    collect_optimizer_state,
    load_checkpoint,
    restore_module_state,
    save_checkpoint,
    torch_generator_state,
)
from .config import ConfigError, TrainConfig, geometry_mismatch
from .datagen import DatasetManifest, SplitParams, split_indices
from .losses import compose_loss, l1
from .model import VideoPredictionModel, build_model

logger = logging.getLogger("npvp.training")

AE_CSV_COLUMNS = ("step", "lr", "l1")
PREDICTOR_CSV_COLUMNS = ("step", "lr", "pixel_l1", "feature_l1", "kl", "total")


def lr_at(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Cosine annealing from lr_max to lr_min, restarting every
    ``restart_period`` epochs."""
    if step < 0:
        raise ValueError("step must be >= 0")
    period_steps = cfg.restart_period * max(1, steps_per_epoch)
    tau = (step % period_steps) / period_steps
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * tau))


def clip_gradients(grads: list[Tensor], max_norm: float) -> tuple[list[Tensor], float]:
    """Global-norm clipping over one parameter group.

    Returns (gradients, pre-clip global norm); gradients are returned as
    given when the norm is already within bounds.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    if not grads:
        return [], 0.0
    norm = math.sqrt(sum(float(g.detach().pow(2).sum()) for g in grads))
    if norm <= max_norm:
        return list(grads), norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


def clip_parameter_gradients_(params, max_norm: float) -> float:
    """In-place variant of :func:`clip_gradients` over ``p.grad`` tensors."""
    grads = [p.grad for p in params if p.grad is not None]
    clipped, norm = clip_gradients(grads, max_norm)
    if norm > max_norm:
        for g, c in zip(grads, clipped):
            g.copy_(c)
    return norm


def transformer_parameters(model: VideoPredictionModel):
    """The transformer encoder/decoder parameter group (gradient clipping
    applies here only; event encoders and the coordinate MLP are exempt)."""
    predictor = model.predictor
    for module in (
        predictor.encoder_blocks,
        predictor.encoder_norm,
        predictor.decoder_blocks,
        predictor.decoder_norm,
        predictor.decoder_head,
    ):
        yield from module.parameters()


class _CsvLog:
    def __init__(self, path: Path, columns):
        self.path = path
        self.columns = tuple(columns)
        self.rows: list[tuple] = []
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.columns)

    def write(self, *values) -> None:
        row = tuple(f"{v:.10g}" if isinstance(v, float) else v for v in values)
        self.rows.append(values)
        self._writer.writerow(row)

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()


def _render_loss_figure(rows, columns, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, name in enumerate(columns):
        if name in ("step", "lr"):
            continue
        ax.plot(steps, [r[j] for r in rows], lw=1.0, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _dataset_tensors(dataset: DatasetManifest) -> list[Tensor]:
    if not dataset.clips:
        raise ConfigError("dataset has no decoded clips; load it with load_frame_folder")
    return [torch.from_numpy(np.ascontiguousarray(c.frames)) for c in dataset.clips]


def _check_dataset_geometry(dataset: DatasetManifest, cfg: TrainConfig) -> None:
    h, w, c = dataset.frame_shape
    m = cfg.model
    if (h, w, c) != (m.image_size, m.image_size, m.image_channels):
        raise ConfigError(
            f"dataset frames are {(h, w, c)} but the model expects "
            f"({m.image_size}, {m.image_size}, {m.image_channels})"
        )
    if min(dataset.clip_lengths) < m.clip_len and cfg.stage == "predictor":
        raise ConfigError(
            f"shortest clip has {min(dataset.clip_lengths)} frames; "
            f"predictor training needs clip_len={m.clip_len}"
        )


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def _sample_windows(clips: list[Tensor], rng: np.random.Generator, cfg: TrainConfig) -> Tensor:
    """Draw ``batch_size`` windows of length clip_len, with replacement."""
    length = cfg.model.clip_len
    picks = rng.integers(0, len(clips), size=cfg.batch_size)
    items = []
    for i in picks:
        clip = clips[int(i)]
        max_start = clip.shape[0] - length
        start = int(rng.integers(0, max_start + 1)) if max_start > 0 else 0
        window = clip[start : start + length]
        if cfg.flips:
            if rng.random() < 0.5:
                window = torch.flip(window, dims=[2])
            if rng.random() < 0.5:
                window = torch.flip(window, dims=[1])
        items.append(window)
    return torch.stack(items)


def train_autoencoder(
    dataset: DatasetManifest, cfg: TrainConfig, out_dir: str | Path
) -> Checkpoint:
    """Minimize per-frame L1 reconstruction; returns the saved checkpoint."""
    if cfg.stage != "autoencoder":
        raise ConfigError(f"train_autoencoder got stage={cfg.stage!r}")
    _check_dataset_geometry(dataset, cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = build_model(cfg.model, seed=cfg.seed)
    model.train()
    frames = torch.cat(_dataset_tensors(dataset), dim=0)  # (N, h, w, c)
    steps_per_epoch = max(1, frames.shape[0] // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    optimizer = torch.optim.Adam(model.autoencoder.parameters(), lr=cfg.lr)
    log = _CsvLog(out_dir / "ae_metrics.csv", AE_CSV_COLUMNS)
    try:
        for step in range(total_steps):
            rng = _step_rng(cfg.seed, step)
            idx = torch.from_numpy(rng.integers(0, frames.shape[0], size=cfg.batch_size))
            batch = frames[idx]
            if cfg.flips:
                if rng.random() < 0.5:
                    batch = torch.flip(batch, dims=[2])
                if rng.random() < 0.5:
                    batch = torch.flip(batch, dims=[1])
            recon = model.autoencoder(batch)
            loss = l1(batch, recon)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            log.write(step, cfg.lr, float(loss))
            if (step + 1) % steps_per_epoch == 0:
                epoch = (step + 1) // steps_per_epoch
                logger.info("ae epoch %d/%d l1=%.5f", epoch, cfg.epochs, float(loss))
    finally:
        log.close()
    _render_loss_figure(log.rows, AE_CSV_COLUMNS, out_dir / "ae_loss.png")

    arrays, ints = collect_module_state(model.autoencoder, prefix="model/autoencoder.")
    opt_arrays, opt_ints, opt_meta = collect_optimizer_state(optimizer)
    arrays.update(opt_arrays)
    ints.update(opt_ints)
    ckpt = Checkpoint(
        config=cfg,
        step=total_steps,
        scope=SCOPE_AUTOENCODER,
        arrays=arrays,
        ints=ints,
        optimizer_meta=opt_meta,
        rng={"seed": cfg.seed},
    )
    save_checkpoint(ckpt, out_dir / "ae.ckpt")
    return ckpt


def _split_params(cfg: TrainConfig) -> SplitParams:
    return SplitParams(
        past_frames=cfg.past_frames,
        future_frames=cfg.future_frames,
        mid_frames=cfg.mid_frames,
        lc_range=cfg.lc_range,
    )


def train_predictor(
    dataset: DatasetManifest,
    ae_ckpt: Checkpoint | str | Path,
    cfg: TrainConfig,
    out_dir: str | Path,
) -> Checkpoint:
    """Train the predictor (transformers, event encoders, coordinate MLP)
    against frozen autoencoder features; returns the saved full checkpoint."""
    if cfg.stage != "predictor":
        raise ConfigError(f"train_predictor got stage={cfg.stage!r}")
    if not isinstance(ae_ckpt, Checkpoint):
        ae_ckpt = load_checkpoint(ae_ckpt)
    mismatch = geometry_mismatch(cfg.model, ae_ckpt.config.model)
    if mismatch:
        raise ConfigError(
            f"autoencoder checkpoint geometry differs from the run config in field "
            f"{mismatch!r}: {getattr(ae_ckpt.config.model, mismatch)} vs "
            f"{getattr(cfg.model, mismatch)}"
        )
    _check_dataset_geometry(dataset, cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = build_model(cfg.model, seed=cfg.seed)
    restore_module_state(model.autoencoder, ae_ckpt, prefix="model/autoencoder.")
    model.autoencoder.requires_grad_(False)
    model.autoencoder.eval()
    model.predictor.train()
    model.coord_encoder.train()

    clips = _dataset_tensors(dataset)
    length = cfg.model.clip_len
    steps_per_epoch = max(1, len(clips) // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    det_steps = round(cfg.det_phase_frac * cfg.epochs) * steps_per_epoch

    decay, no_decay = [], []
    for param in model.parameters():
        if not param.requires_grad:
            continue
        (no_decay if param.dim() <= 1 else decay).append(param)
    optimizer = torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.lr_max,
    )
    clip_group = list(transformer_parameters(model))
    noise_gen = torch.Generator().manual_seed(cfg.seed + 1)
    times = torch.arange(length, dtype=torch.float32)

    log = _CsvLog(out_dir / "predictor_metrics.csv", PREDICTOR_CSV_COLUMNS)
    try:
        for step in range(total_steps):
            lr = lr_at(step, steps_per_epoch, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr

            rng = _step_rng(cfg.seed, step)
            batch = _sample_windows(clips, rng, cfg)  # (B, L, h, w, c)
            split = split_indices(length, cfg.task, _split_params(cfg), rng)
            ctx = torch.as_tensor(split.context_idx)
            tgt = torch.as_tensor(split.target_idx)

            frames_c, frames_t = batch[:, ctx], batch[:, tgt]
            with torch.no_grad():
                y_c = model.autoencoder.encode(frames_c)
                y_t = model.autoencoder.encode(frames_t)
            x_c = model.encode_times(times[ctx]).unsqueeze(0).expand(batch.shape[0], -1, -1, -1, -1)
            x_t = model.encode_times(times[tgt]).unsqueeze(0).expand(batch.shape[0], -1, -1, -1, -1)

            deterministic_phase = step < det_steps
            if deterministic_phase:
                y_hat, prior, posterior = model.predictor.predict_features(
                    x_c, y_c, x_t, mode="deterministic"
                )
                beta = 0.0
            else:
                y_hat, prior, posterior = model.predictor.predict_features(
                    x_c, y_c, x_t, mode="sample", y_t=y_t, generator=noise_gen
                )
                beta = cfg.beta
            frames_hat = model.autoencoder.decode(y_hat)
            breakdown = compose_loss(
                frames_t, frames_hat, y_t, y_hat, posterior, prior, cfg.gamma, beta
            )

            optimizer.zero_grad(set_to_none=True)
            breakdown.total.backward()
            clip_parameter_gradients_(clip_group, cfg.clip_norm)
            optimizer.step()

            values = breakdown.as_floats()
            log.write(step, lr, values["pixel_l1"], values["feature_l1"], values["kl"], values["total"])
            if (step + 1) % steps_per_epoch == 0:
                epoch = (step + 1) // steps_per_epoch
                logger.info(
                    "predictor epoch %d/%d phase=%s total=%.5f feature=%.5f",
                    epoch,
                    cfg.epochs,
                    "det" if deterministic_phase else "stoch",
                    values["total"],
                    values["feature_l1"],
                )
    finally:
        log.close()
    _render_loss_figure(log.rows, PREDICTOR_CSV_COLUMNS, out_dir / "predictor_loss.png")

    arrays, ints = collect_module_state(model, prefix="model/")
    opt_arrays, opt_ints, opt_meta = collect_optimizer_state(optimizer)
    arrays.update(opt_arrays)
    ints.update(opt_ints)
    ckpt = Checkpoint(
        config=cfg,
        step=total_steps,
        scope=SCOPE_FULL,
        arrays=arrays,
        ints=ints,
        optimizer_meta=opt_meta,
        rng={"seed": cfg.seed, "torch_noise": torch_generator_state(noise_gen)},
    )
    save_checkpoint(ckpt, out_dir / "predictor.ckpt")
    return ckpt
