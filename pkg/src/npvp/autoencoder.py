"""Frame autoencoder: downsampling CNN encoder with global spatial attention,
and the mirrored upsampling decoder.

Frames are encoded independently of each other (no temporal mixing), so the
feature sequence of a clip is just the per-frame map applied along time. The
autoencoder is trained on its own and frozen before the predictor stage.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .config import ModelConfig


def _norm(channels: int) -> nn.Module:
    # track_running_stats=False keeps the frozen encoder a pure function.
    return nn.InstanceNorm2d(channels, affine=True, track_running_stats=False)


class NonLocalAttention2d(nn.Module):
    """Global spatial self-attention with a zero-initialized residual gate.

    A freshly constructed layer is an exact identity: the gate scalar starts
    at 0 and only training moves it away.
    """

    def __init__(self, channels: int):
        super().__init__()
        qk_channels = max(1, channels // 8)
        self.query = nn.Conv2d(channels, qk_channels, 1)
        self.key = nn.Conv2d(channels, qk_channels, 1)
        self.value = nn.Conv2d(channels, channels, 1)
        self.gate = nn.Parameter(torch.zeros(()))
        self.scale = qk_channels ** -0.5

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        q = self.query(x).flatten(2)  # (B, qk, N)
        k = self.key(x).flatten(2)
        v = self.value(x).flatten(2)  # (B, C, N)
        attn = torch.softmax(q.transpose(1, 2) @ k * self.scale, dim=-1)  # (B, N, N)
        out = v @ attn.transpose(1, 2)
        return x + self.gate * out.view(b, c, h, w)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(channels),
        )

    def forward(self, x: Tensor) -> Tensor:
        return x + self.body(x)


class FrameEncoder(nn.Module):
    """Conv encoder: stem, strided downsampling blocks (doubling width),
    attention after the second downsample, projection to the feature dim,
    residual blocks, and a final attention layer."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n_down = cfg.num_downsample
        base = cfg.ae_base_channels
        layers: list[nn.Module] = [
            nn.Conv2d(cfg.image_channels, base, 3, padding=1),
            _norm(base),
            nn.ReLU(inplace=True),
        ]
        ch = base
        for i in range(n_down):
            layers += [nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1), _norm(ch * 2), nn.ReLU(inplace=True)]
            ch *= 2
            if i == 1:
                layers.append(NonLocalAttention2d(ch))
        layers += [nn.Conv2d(ch, cfg.feature_dim, 3, padding=1)]
        layers += [ResidualBlock(cfg.feature_dim) for _ in range(cfg.num_residual)]
        layers.append(NonLocalAttention2d(cfg.feature_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class FrameDecoder(nn.Module):
    """Mirrored upsampling decoder; sigmoid output keeps pixels in [0, 1]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n_down = cfg.num_downsample
        base = cfg.ae_base_channels
        ch = base << n_down
        layers: list[nn.Module] = [
            nn.Conv2d(cfg.feature_dim, ch, 3, padding=1),
            _norm(ch),
            nn.ReLU(inplace=True),
        ]
        for _ in range(n_down):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 4, stride=2, padding=1),
                _norm(ch // 2),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        layers += [nn.Conv2d(ch, cfg.image_channels, 3, padding=1), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class FrameAutoencoder(nn.Module):
    """Channel-last frame <-> feature mapping with arbitrary leading dims.

    ``encode`` takes (..., I_h, I_w, I_c) frames and returns (..., H, W, D)
    features; ``decode`` is the inverse direction. Leading dimensions (batch,
    time) are flattened for the conv stacks and restored afterwards.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = FrameEncoder(cfg)
        self.decoder = FrameDecoder(cfg)

    def encode(self, frames: Tensor) -> Tensor:
        if frames.dim() < 4:
            raise ValueError(f"expected (..., h, w, c) frames, got shape {tuple(frames.shape)}")
        h, w, c = frames.shape[-3:]
        if (h, w, c) != (self.cfg.image_size, self.cfg.image_size, self.cfg.image_channels):
            raise ValueError(
                f"frame shape {(h, w, c)} does not match configured "
                f"({self.cfg.image_size}, {self.cfg.image_size}, {self.cfg.image_channels})"
            )
        lead = frames.shape[:-3]
        flat = frames.reshape(-1, h, w, c).permute(0, 3, 1, 2)
        feats = self.encoder(flat).permute(0, 2, 3, 1)
        return feats.reshape(*lead, *feats.shape[1:])

    def decode(self, features: Tensor) -> Tensor:
        if features.dim() < 4:
            raise ValueError(f"expected (..., H, W, D) features, got shape {tuple(features.shape)}")
        h, w, d = features.shape[-3:]
        if (h, w, d) != (self.cfg.feature_size, self.cfg.feature_size, self.cfg.feature_dim):
            raise ValueError(
                f"feature shape {(h, w, d)} does not match configured "
                f"({self.cfg.feature_size}, {self.cfg.feature_size}, {self.cfg.feature_dim})"
            )
        lead = features.shape[:-3]
        flat = features.reshape(-1, h, w, d).permute(0, 3, 1, 2)
        frames = self.decoder(flat).permute(0, 2, 3, 1)
        return frames.reshape(*lead, *frames.shape[1:])

    def forward(self, frames: Tensor) -> Tensor:
        return self.decode(self.encode(frames))


def ae_reconstruction_loss(frames: Tensor, reconstructed: Tensor) -> Tensor:
    """Mean absolute error over all elements."""
    if frames.shape != reconstructed.shape:
        raise ValueError(f"shape mismatch: {tuple(frames.shape)} vs {tuple(reconstructed.shape)}")
    return (frames - reconstructed).abs().mean()
