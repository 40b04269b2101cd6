"""Attentive neural-process predictor over frame features.

The context set (coordinate encodings X_C, features Y_C) passes through a
spatio-temporal transformer encoder to a memory M_C. A context event encoder
maps the temporal mean of that memory to a diagonal Gaussian over a single
global event latent; during training a target event encoder does the same for
the target set through the shared transformer encoder. The sampled event is
replicated once per target coordinate as the initial decoder query, and a
transformer decoder with temporal cross-attention onto M_C emits the target
features.

All attention is unmasked: the model is non-autoregressive and permutation
invariant over the context set.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .config import ModelConfig


@dataclass
class EventDistribution:
    """Diagonal Gaussian over the event latent; shapes (..., H, W, D)."""

    mu: Tensor
    sigma: Tensor


def sample_event(
    dist: EventDistribution,
    noise: Tensor | None = None,
    deterministic: bool = False,
    generator: torch.Generator | None = None,
) -> Tensor:
    """Reparameterized draw ``mu + sigma * eps``; the deterministic flag
    returns the mean exactly."""
    if deterministic:
        return dist.mu
    if noise is None:
        noise = torch.randn(
            dist.mu.shape, generator=generator, dtype=dist.mu.dtype, device=dist.mu.device
        )
    elif noise.shape != dist.mu.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != mu shape {tuple(dist.mu.shape)}")
    return dist.mu + dist.sigma * noise


def _spatial_attend(attn: nn.MultiheadAttention, x: Tensor, pos: Tensor) -> Tensor:
    """Self-attention over the H*W positions of each frame independently."""
    b, l, h, w, d = x.shape
    xs = x.reshape(b * l, h * w, d)
    ps = pos.reshape(b * l, h * w, d)
    out, _ = attn(xs + ps, xs + ps, xs, need_weights=False)
    return out.reshape(b, l, h, w, d)


def _temporal_attend(
    attn: nn.MultiheadAttention,
    x: Tensor,
    pos: Tensor,
    memory: Tensor | None = None,
    memory_pos: Tensor | None = None,
) -> Tensor:
    """Attention across frames at each spatial location; self-attention when
    no memory is given, cross-attention onto the memory otherwise."""
    b, l, h, w, d = x.shape
    xs = (x + pos).permute(0, 2, 3, 1, 4).reshape(b * h * w, l, d)
    if memory is None:
        vs = x.permute(0, 2, 3, 1, 4).reshape(b * h * w, l, d)
        out, _ = attn(xs, xs, vs, need_weights=False)
    else:
        lm = memory.shape[1]
        ms = memory.permute(0, 2, 3, 1, 4).reshape(b * h * w, lm, d)
        mp = memory_pos.permute(0, 2, 3, 1, 4).reshape(b * h * w, lm, d)
        out, _ = attn(xs, ms + mp, ms, need_weights=False)
    return out.reshape(b, h, w, l, d).permute(0, 3, 1, 2, 4)


def _feed_forward(dim: int, mult: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(dim, dim * mult), nn.ReLU(inplace=True), nn.Linear(dim * mult, dim))


class EncoderBlock(nn.Module):
    """Pre-norm block: spatial self-attention, temporal self-attention, MLP.

    Coordinate encodings enter every attention layer additively on queries
    and keys only.
    """

    def __init__(self, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.spatial = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.temporal = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_spatial = nn.LayerNorm(dim)
        self.norm_temporal = nn.LayerNorm(dim)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = _feed_forward(dim, ff_mult)

    def forward(self, y: Tensor, pos: Tensor) -> Tensor:
        y = y + _spatial_attend(self.spatial, self.norm_spatial(y), pos)
        y = y + _temporal_attend(self.temporal, self.norm_temporal(y), pos)
        return y + self.ff(self.norm_ff(y))


class DecoderBlock(nn.Module):
    """Pre-norm block over the target queries: spatial self-attention,
    temporal self-attention, temporal cross-attention onto the context
    memory (memory as content, its coordinate encodings as key positions),
    then an MLP."""

    def __init__(self, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.spatial = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.temporal = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.cross = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_spatial = nn.LayerNorm(dim)
        self.norm_temporal = nn.LayerNorm(dim)
        self.norm_cross = nn.LayerNorm(dim)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = _feed_forward(dim, ff_mult)

    def forward(self, q: Tensor, q_pos: Tensor, memory: Tensor, memory_pos: Tensor) -> Tensor:
        q = q + _spatial_attend(self.spatial, self.norm_spatial(q), q_pos)
        q = q + _temporal_attend(self.temporal, self.norm_temporal(q), q_pos)
        q = q + _temporal_attend(self.cross, self.norm_cross(q), q_pos, memory, memory_pos)
        return q + self.ff(self.norm_ff(q))


class EventEncoder(nn.Module):
    """Small CNN from a (B, H, W, D) aggregate to a diagonal Gaussian.

    Three conv/batch-norm/ReLU layers followed by separate conv heads for the
    mean and the (softplus + floor) scale.
    """

    def __init__(self, dim: int, sigma_min: float):
        super().__init__()
        self.sigma_min = sigma_min
        body = []
        for _ in range(3):
            body += [nn.Conv2d(dim, dim, 3, padding=1), nn.BatchNorm2d(dim), nn.ReLU(inplace=True)]
        self.body = nn.Sequential(*body)
        self.mu_head = nn.Conv2d(dim, dim, 1)
        self.sigma_head = nn.Conv2d(dim, dim, 1)

    def forward(self, aggregate: Tensor) -> EventDistribution:
        x = aggregate.permute(0, 3, 1, 2)
        x = self.body(x)
        mu = self.mu_head(x).permute(0, 2, 3, 1)
        raw = self.sigma_head(x).permute(0, 2, 3, 1)
        sigma = nn.functional.softplus(raw) + self.sigma_min
        return EventDistribution(mu=mu, sigma=sigma)


class NeuralProcessPredictor(nn.Module):
    """Transformer encoder/decoder plus the two event encoders.

    Public methods accept either batched (B, L, H, W, D) tensors or unbatched
    (L, H, W, D) ones and return matching ranks.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dim, heads, mult = cfg.feature_dim, cfg.heads, cfg.ff_mult
        self.encoder_blocks = nn.ModuleList(
            EncoderBlock(dim, heads, mult) for _ in range(cfg.enc_blocks)
        )
        self.encoder_norm = nn.LayerNorm(dim)
        self.decoder_blocks = nn.ModuleList(
            DecoderBlock(dim, heads, mult) for _ in range(cfg.dec_blocks)
        )
        self.decoder_norm = nn.LayerNorm(dim)
        self.decoder_head = nn.Linear(dim, dim)
        self.context_event = EventEncoder(dim, cfg.sigma_min)
        self.target_event = EventEncoder(dim, cfg.sigma_min)

    @staticmethod
    def _batched(*tensors: Tensor) -> tuple[bool, list[Tensor]]:
        dims = {t.dim() for t in tensors}
        if dims == {5}:
            return True, list(tensors)
        if dims == {4}:
            return False, [t.unsqueeze(0) for t in tensors]
        raise ValueError(f"inputs must be uniformly (L, H, W, D) or (B, L, H, W, D); got dims {dims}")

    def encode_context(self, x: Tensor, y: Tensor) -> Tensor:
        """Transformer-encode a set of (coordinate encoding, feature) pairs."""
        if x.shape != y.shape:
            raise ValueError(
                f"coordinate encodings {tuple(x.shape)} and features {tuple(y.shape)} must match"
            )
        batched, (x, y) = self._batched(x, y)
        for block in self.encoder_blocks:
            y = block(y, x)
        y = self.encoder_norm(y)
        return y if batched else y.squeeze(0)

    def event_distribution(self, memory: Tensor, which: str = "context") -> EventDistribution:
        """Temporal mean of the memory through the selected event encoder."""
        if which not in ("context", "target"):
            raise ValueError(f"which must be 'context' or 'target', got {which!r}")
        batched, (memory,) = self._batched(memory)
        encoder = self.context_event if which == "context" else self.target_event
        dist = encoder(memory.mean(dim=1))
        if not batched:
            dist = EventDistribution(dist.mu.squeeze(0), dist.sigma.squeeze(0))
        return dist

    def decode_targets(self, x_t: Tensor, x_c: Tensor, memory: Tensor, event: Tensor) -> Tensor:
        """Predict target features from target coordinates, context memory,
        and an event sample replicated as the initial query of every target."""
        batched, (x_t,) = self._batched(x_t)
        _, (x_c, memory) = self._batched(x_c, memory)
        if x_c.shape != memory.shape:
            raise ValueError(
                f"context encodings {tuple(x_c.shape)} and memory {tuple(memory.shape)} must match"
            )
        if event.dim() == x_t.dim() - 2:
            event = event.unsqueeze(0)
        q = event.unsqueeze(1).expand(-1, x_t.shape[1], -1, -1, -1)
        for block in self.decoder_blocks:
            q = block(q, x_t, memory, x_c)
        out = self.decoder_head(self.decoder_norm(q))
        return out if batched else out.squeeze(0)

    def predict_features(
        self,
        x_c: Tensor,
        y_c: Tensor,
        x_t: Tensor,
        mode: str = "deterministic",
        y_t: Tensor | None = None,
        noise: Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> tuple[Tensor, EventDistribution, EventDistribution | None]:
        """Full pass: returns (predicted target features, context-prior event
        distribution, target-posterior distribution or None).

        The event sample comes from the posterior when target features are
        supplied (training) and from the context prior otherwise (inference);
        deterministic mode uses the prior mean.
        """
        if mode not in ("deterministic", "sample"):
            raise ValueError(f"mode must be 'deterministic' or 'sample', got {mode!r}")
        memory = self.encode_context(x_c, y_c)
        prior = self.event_distribution(memory, "context")
        posterior = None
        if y_t is not None:
            target_memory = self.encode_context(x_t, y_t)
            posterior = self.event_distribution(target_memory, "target")
        if mode == "deterministic":
            event = prior.mu
        else:
            source = posterior if posterior is not None else prior
            event = sample_event(source, noise=noise, generator=generator)
        y_hat = self.decode_targets(x_t, x_c, memory, event)
        return y_hat, prior, posterior
