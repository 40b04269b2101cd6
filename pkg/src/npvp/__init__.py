"""Continuous conditional video prediction as a neural process over frame
features, with Fourier-feature coordinate encodings for arbitrary-time
queries. One trained model covers future prediction, interpolation, past
extrapolation, and random missing-frame completion."""

from .autoencoder import FrameAutoencoder, NonLocalAttention2d, ae_reconstruction_loss
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint, state_hash
from .config import ConfigError, ModelConfig, TrainConfig, load_train_config
from .coords import CoordinateEncoder, fourier_features, make_coord_grid
from .datagen import (
    DataError,
    DatasetManifest,
    SplitError,
    SplitParams,
    TaskSplit,
    VideoClip,
    gen_moving_shapes,
    load_frame_folder,
    split_clip,
)
from .inference import (
    BestOfN,
    PredictionRequest,
    PredictionResult,
    RolloutResult,
    best_of_n,
    evaluate_manifest,
    nearest_context_baseline,
    predict,
    rollout_vfp,
)
from .losses import LossBreakdown, compose_loss, gaussian_kl, l1
from .metrics import MetricReport, psnr, report, ssim
from .model import VideoPredictionModel, build_model, model_from_checkpoint
from .predictor import EventDistribution, NeuralProcessPredictor, sample_event
from .training import lr_at, clip_gradients, train_autoencoder, train_predictor

__version__ = "0.1.0"
