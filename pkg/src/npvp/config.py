"""Configuration dataclasses plus strict JSON loading for runs.

Unknown keys in a config file are rejected so that typos fail loudly
before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Invalid configuration value or file."""


@dataclass
class ModelConfig:
    """Geometry and architecture hyperparameters shared by all components.

    ``image_size`` must be divisible by ``2 ** downsample_blocks``. When
    ``downsample_blocks``/``residual_blocks`` are left as None they follow
    the resolution rule: 3 downsampling / 2 residual blocks up to 64 px,
    4 / 3 at 128 px.
    """

    image_size: int = 64
    image_channels: int = 1
    feature_dim: int = 64
    heads: int = 4
    enc_blocks: int = 2
    dec_blocks: int = 2
    ff_mult: int = 4
    fourier_features: int = 128
    fourier_sigma: float = 3.0
    ae_base_channels: int = 16
    downsample_blocks: int | None = None
    residual_blocks: int | None = None
    clip_len: int = 20
    sigma_min: float = 1e-4

    def __post_init__(self):
        if self.image_size < 8:
            raise ConfigError(f"image_size must be >= 8, got {self.image_size}")
        if self.image_channels not in (1, 3):
            raise ConfigError(f"image_channels must be 1 or 3, got {self.image_channels}")
        if self.feature_dim < 1 or self.feature_dim % self.heads != 0:
            raise ConfigError(
                f"feature_dim ({self.feature_dim}) must be a positive multiple of heads ({self.heads})"
            )
        if self.clip_len < 2:
            raise ConfigError(f"clip_len must be >= 2, got {self.clip_len}")
        if self.fourier_features < 1:
            raise ConfigError("fourier_features must be >= 1")
        if self.sigma_min <= 0:
            raise ConfigError("sigma_min must be positive")
        for name in ("enc_blocks", "dec_blocks", "ae_base_channels", "ff_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        n_down = self.num_downsample
        if n_down < 1:
            raise ConfigError("downsample_blocks must be >= 1")
        if self.image_size % (1 << n_down) != 0:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by 2^{n_down} downsampling blocks"
            )

    @property
    def num_downsample(self) -> int:
        if self.downsample_blocks is not None:
            return self.downsample_blocks
        return 3 if self.image_size <= 64 else 4

    @property
    def num_residual(self) -> int:
        if self.residual_blocks is not None:
            return self.residual_blocks
        return 2 if self.image_size <= 64 else 3

    @property
    def feature_size(self) -> int:
        """Spatial side length of the feature grid."""
        return self.image_size >> self.num_downsample


@dataclass
class TrainConfig:
    """One training run: stage selection, schedule, loss weights, split policy."""

    stage: str = "predictor"  # "autoencoder" | "predictor"
    epochs: int = 50
    batch_size: int = 4
    lr: float = 1e-4  # autoencoder stage (constant)
    lr_max: float = 1e-4
    lr_min: float = 1e-7
    restart_period: int = 150  # epochs per cosine warm restart
    clip_norm: float = 1.0
    weight_decay: float = 1e-4
    gamma: float = 0.01
    beta: float = 1e-6
    det_phase_frac: float = 1.0 / 3.0  # deterministic warm-up share of epochs
    seed: int = 0
    task: str = "vrc"
    past_frames: int | None = None
    future_frames: int | None = None
    mid_frames: int | None = None
    lc_range: tuple[int, int] = (4, 16)
    flips: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.stage not in ("autoencoder", "predictor"):
            raise ConfigError(f"stage must be 'autoencoder' or 'predictor', got {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.lr_min < self.lr_max:
            raise ConfigError(f"lr_min ({self.lr_min}) must be < lr_max ({self.lr_max})")
        if self.restart_period < 1:
            raise ConfigError("restart_period must be >= 1")
        if self.gamma < 0 or self.beta < 0:
            raise ConfigError("gamma and beta must be >= 0")
        if not 0.0 <= self.det_phase_frac <= 1.0:
            raise ConfigError("det_phase_frac must lie in [0, 1]")
        if self.task not in ("vfp", "vfi", "vpe", "vrc"):
            raise ConfigError(f"unknown task {self.task!r}")
        self.lc_range = (int(self.lc_range[0]), int(self.lc_range[1]))
        if not 1 <= self.lc_range[0] <= self.lc_range[1]:
            raise ConfigError(f"invalid lc_range {self.lc_range}")


def _dataclass_from_dict(cls, data: dict, context: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{context}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key == "model":
            kwargs[key] = _dataclass_from_dict(ModelConfig, value, f"{context}.model")
        elif key == "lc_range":
            if not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise ConfigError(f"{context}.lc_range must be a [low, high] pair")
            kwargs[key] = (value[0], value[1])
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def train_config_from_dict(data: dict) -> TrainConfig:
    return _dataclass_from_dict(TrainConfig, data, "config")


def load_train_config(path: str | Path) -> TrainConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return train_config_from_dict(raw)


def config_to_dict(cfg) -> dict:
    """JSON-safe dict mirror of a config dataclass."""
    out = dataclasses.asdict(cfg)

    def _clean(obj):
        if isinstance(obj, dict):
            return {k: _clean(v) for k, v in obj.items()}
        if isinstance(obj, tuple):
            return [_clean(v) for v in obj]
        if isinstance(obj, list):
            return [_clean(v) for v in obj]
        return obj

    return _clean(out)


_GEOMETRY_FIELDS = (
    "image_size",
    "image_channels",
    "feature_dim",
    "heads",
    "enc_blocks",
    "dec_blocks",
    "ff_mult",
    "fourier_features",
    "ae_base_channels",
    "clip_len",
)


def geometry_mismatch(expected: ModelConfig, found: ModelConfig) -> str | None:
    """Name of the first model-geometry field that differs, or None."""
    for name in _GEOMETRY_FIELDS:
        if getattr(expected, name) != getattr(found, name):
            return name
    if expected.num_downsample != found.num_downsample:
        return "downsample_blocks"
    if expected.num_residual != found.num_residual:
        return "residual_blocks"
    return None
