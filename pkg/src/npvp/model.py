"""The bundled model: frame autoencoder, coordinate encoder, and predictor."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .autoencoder import FrameAutoencoder
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    SCOPE_FULL,
    collect_module_state,
    load_checkpoint,
    restore_module_state,
)
from .config import ModelConfig
from .coords import CoordinateEncoder, make_coord_grid
from .predictor import NeuralProcessPredictor


class VideoPredictionModel(nn.Module):
    """Everything needed to go from context frames and query times to frames."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.autoencoder = FrameAutoencoder(cfg)
        self.coord_encoder = CoordinateEncoder(
            out_dim=cfg.feature_dim,
            num_features=cfg.fourier_features,
            sigma=cfg.fourier_sigma,
        )
        self.predictor = NeuralProcessPredictor(cfg)

    def encode_times(self, times, dtype: torch.dtype | None = None) -> Tensor:
        """Coordinate encodings (L, H, W, D) for raw times inside the window."""
        if dtype is None:
            dtype = next(self.coord_encoder.parameters()).dtype
        grid = make_coord_grid(
            self.cfg.clip_len, times, self.cfg.feature_size, self.cfg.feature_size, dtype=dtype
        )
        return self.coord_encoder(grid)


def build_model(cfg: ModelConfig, seed: int | None = None) -> VideoPredictionModel:
    """Construct a model; with a seed, initialization is reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return VideoPredictionModel(cfg)


def model_from_checkpoint(ckpt: Checkpoint | str) -> VideoPredictionModel:
    """Rebuild the full model saved in a checkpoint (eval mode)."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    if ckpt.scope != SCOPE_FULL:
        raise CheckpointError(
            f"checkpoint scope is {ckpt.scope!r}; a full model checkpoint is required"
        )
    model = VideoPredictionModel(ckpt.config.model)
    restore_module_state(model, ckpt, prefix="model/")
    model.eval()
    return model


def model_state_checkpoint(
    model: VideoPredictionModel, config, step: int, scope: str = SCOPE_FULL
) -> Checkpoint:
    """Checkpoint holding the model state (no optimizer/RNG extras)."""
    if scope == SCOPE_FULL:
        arrays, ints = collect_module_state(model, prefix="model/")
    else:
        arrays, ints = collect_module_state(model.autoencoder, prefix="model/autoencoder.")
    return Checkpoint(config=config, step=step, scope=scope, arrays=arrays, ints=ints)
