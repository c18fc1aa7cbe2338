"""Spatial (position) and channel-wise self-attention over feature maps.

Both follow the dual-attention design: a residual ``out = gamma * attended + x``
with ``gamma`` initialised to zero, so a fresh module is the identity.
Feature maps are shaped (B, C, F, D); positions are the flattened F x D grid.
"""
from __future__ import annotations

import torch
from torch import nn


def _check_finite(x: torch.Tensor):
    if not torch.isfinite(x).all():
        raise ValueError("attention input contains non-finite values")


class SpatialAttention(nn.Module):
    def __init__(self, channels: int, key_dim: int | None = None):
        super().__init__()
        key_dim = key_dim or max(1, channels // 8)
        self.query = nn.Linear(channels, key_dim)
        self.key = nn.Linear(channels, key_dim)
        self.value = nn.Linear(channels, channels)
        self.gamma = nn.Parameter(torch.zeros(1))

    def affinity(self, x: torch.Tensor) -> torch.Tensor:
        """Row-stochastic (B, N, N) position affinity, N = F * D."""
        pos = x.flatten(2).transpose(1, 2)  # (B, N, C)
        energy = self.query(pos) @ self.key(pos).transpose(1, 2)
        return torch.softmax(energy, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_finite(x)
        pos = x.flatten(2).transpose(1, 2)
        attended = self.affinity(x) @ self.value(pos)  # (B, N, C)
        return self.gamma * attended.transpose(1, 2).reshape(x.shape) + x


class ChannelAttention(nn.Module):
    """Channel affinity from raw channel features, no projections."""

    def __init__(self):
        super().__init__()
        self.gamma = nn.Parameter(torch.zeros(1))

    def affinity(self, x: torch.Tensor) -> torch.Tensor:
        flat = x.flatten(2)  # (B, C, N)
        energy = flat @ flat.transpose(1, 2)
        # Same row-max shift as the reference design; it cancels to softmax(-energy).
        energy = energy.amax(dim=-1, keepdim=True) - energy
        return torch.softmax(energy, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_finite(x)
        attended = self.affinity(x) @ x.flatten(2)
        return self.gamma * attended.reshape(x.shape) + x


class DualAttention(nn.Module):
    """Spatial attention followed by channel attention."""

    def __init__(self, channels: int, key_dim: int | None = None):
        super().__init__()
        self.spatial = SpatialAttention(channels, key_dim)
        self.channel = ChannelAttention()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.channel(self.spatial(x))
