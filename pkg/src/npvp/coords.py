"""Normalized spatio-temporal coordinate grids and the Fourier-feature encoder.

The encoder is an implicit representation of coordinates: a frozen random
Gaussian projection followed by sin/cos features and a small ReLU MLP. It is
continuous in the temporal coordinate, so it can be queried at non-integer
times the model never saw during training.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn


def make_coord_grid(
    window_len: int,
    query_times,
    height: int,
    width: int,
    dtype: torch.dtype = torch.float32,
) -> Tensor:
    """Coordinate tensor of shape (L, H, W, 3) with channels (h, w, t), each
    normalized to [0, 1] inside the training window.

    Spatial axes normalize by (size - 1); a singleton axis maps to 0. Times
    normalize by (window_len - 1); times beyond the window are allowed and
    simply exceed 1 (block-wise rollout re-windows before querying them).
    """
    if window_len < 2:
        raise ValueError(f"window_len must be >= 2, got {window_len}")
    if height < 1 or width < 1:
        raise ValueError("height and width must be >= 1")
    times = torch.as_tensor(query_times, dtype=dtype).reshape(-1)
    if times.numel() == 0:
        raise ValueError("query_times must be nonempty")

    hs = torch.arange(height, dtype=dtype)
    ws = torch.arange(width, dtype=dtype)
    if height > 1:
        hs = hs / (height - 1)
    if width > 1:
        ws = ws / (width - 1)
    ts = times / (window_len - 1)

    grid = torch.empty((times.numel(), height, width, 3), dtype=dtype)
    grid[..., 0] = hs.view(1, height, 1)
    grid[..., 1] = ws.view(1, 1, width)
    grid[..., 2] = ts.view(-1, 1, 1)
    return grid


def fourier_features(coords: Tensor, projection: Tensor) -> Tensor:
    """Map coordinates (..., K) through a projection (m, K) to [cos; sin] of
    shape (..., 2m), with the cosine block first."""
    proj = 2.0 * math.pi * coords @ projection.T
    return torch.cat([torch.cos(proj), torch.sin(proj)], dim=-1)


class CoordinateEncoder(nn.Module):
    """Fourier-feature MLP from normalized (h, w, t) coordinates to D-dim encodings.

    The Gaussian projection matrix is sampled once and registered as a buffer:
    it never receives gradients and is bitwise constant across training. Only
    the MLP weights train, jointly with the predictor.
    """

    def __init__(
        self,
        out_dim: int,
        num_features: int = 128,
        sigma: float = 3.0,
        in_dim: int = 3,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        projection = sigma * torch.randn((num_features, in_dim), generator=generator)
        self.register_buffer("projection", projection)
        self.mlp = nn.Sequential(
            nn.Linear(2 * num_features, out_dim),
            nn.ReLU(),
            nn.Linear(out_dim, out_dim),
            nn.ReLU(),
            nn.Linear(out_dim, out_dim),
        )

    def forward(self, grid: Tensor) -> Tensor:
        """Encode a (..., 3) coordinate grid to (..., D)."""
        return self.mlp(fourier_features(grid, self.projection))
