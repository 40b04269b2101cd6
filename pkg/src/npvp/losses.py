"""Training objective: L1 reconstruction terms, diagonal-Gaussian KL, and
their weighted composition."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .predictor import EventDistribution


@dataclass
class LossBreakdown:
    """Per-term scalars; ``total = gamma * pixel_l1 + feature_l1 + beta * kl``."""

    pixel_l1: Tensor
    feature_l1: Tensor
    kl: Tensor
    total: Tensor
    gamma: float
    beta: float

    def as_floats(self) -> dict[str, float]:
        return {
            "pixel_l1": float(self.pixel_l1.detach()),
            "feature_l1": float(self.feature_l1.detach()),
            "kl": float(self.kl.detach()),
            "total": float(self.total.detach()),
        }


def l1(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def gaussian_kl(posterior: EventDistribution, prior: EventDistribution) -> Tensor:
    """KL(posterior || prior) between diagonal Gaussians, summed over the
    latent (H, W, D) dimensions; any leading batch dimension is averaged."""
    if posterior.mu.shape != prior.mu.shape:
        raise ValueError(
            f"shape mismatch: {tuple(posterior.mu.shape)} vs {tuple(prior.mu.shape)}"
        )
    s1, s2 = posterior.sigma, prior.sigma
    if bool((s1 <= 0).any()) or bool((s2 <= 0).any()):
        raise ValueError("sigmas must be strictly positive")
    term = torch.log(s2 / s1) + (s1.square() + (posterior.mu - prior.mu).square()) / (
        2.0 * s2.square()
    ) - 0.5
    if term.dim() == 3:
        return term.sum()
    return term.sum(dim=(-3, -2, -1)).mean()


def compose_loss(
    target_frames: Tensor,
    predicted_frames: Tensor,
    target_features: Tensor,
    predicted_features: Tensor,
    posterior: EventDistribution | None,
    prior: EventDistribution | None,
    gamma: float,
    beta: float,
) -> LossBreakdown:
    """Weighted total of pixel L1, feature L1, and event KL.

    The KL term is 0 when either distribution is missing (the deterministic
    training phase never builds a posterior).
    """
    if gamma < 0 or beta < 0:
        raise ValueError("gamma and beta must be >= 0")
    pixel = l1(target_frames, predicted_frames)
    feature = l1(target_features, predicted_features)
    if posterior is not None and prior is not None:
        kl = gaussian_kl(posterior, prior)
    else:
        kl = torch.zeros((), dtype=feature.dtype, device=feature.device)
    total = gamma * pixel + feature + beta * kl
    return LossBreakdown(pixel_l1=pixel, feature_l1=feature, kl=kl, total=total, gamma=gamma, beta=beta)
