"""Probabilistic encoder: q(t|x), q(y|x,t) and the treatment-gated q(z|x,y,t).

All maps act frame-wise on ``x_i``, the (C * D)-dimensional slice of the
feature map at frame i. Frame tensors are shaped (..., C * D).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .nets import MLP

VAR_FLOOR = 1e-6


def gate(t: torch.Tensor, arm1: torch.Tensor, arm0: torch.Tensor) -> torch.Tensor:
    """``t * arm1 + (1 - t) * arm0`` that returns the selected arm bit-exactly for t in {0, 1}."""
    t = t.to(arm1.dtype)
    while t.dim() < arm1.dim():
        t = t.unsqueeze(-1)
    hard = (t == 0) | (t == 1)
    soft = t * arm1 + (1 - t) * arm0
    return torch.where(hard, torch.where(t == 1, arm1, arm0), soft)


def squash_variance(raw: torch.Tensor) -> torch.Tensor:
    """Logistic squashing into [VAR_FLOOR, 1 - VAR_FLOOR], strictly inside (0, 1) even when saturated."""
    return VAR_FLOOR + (1 - 2 * VAR_FLOOR) * torch.sigmoid(raw)


@dataclass
class PosteriorParams:
    t_logit: torch.Tensor
    y_logits_t0: torch.Tensor
    y_logits_t1: torch.Tensor
    y_logits: torch.Tensor
    mu_t0: torch.Tensor
    var_t0: torch.Tensor
    mu_t1: torch.Tensor
    var_t1: torch.Tensor
    mu: torch.Tensor
    var: torch.Tensor

    def log_q(self, z: torch.Tensor) -> torch.Tensor:
        """Diagonal-Gaussian log density of ``z``, summed over the latent axis."""
        return -0.5 * (((z - self.mu) ** 2) / self.var + torch.log(self.var) + math.log(2 * math.pi)).sum(-1)


def sample_z(posterior: PosteriorParams, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterised draw ``mu + sqrt(var) * noise``."""
    return posterior.mu + torch.sqrt(posterior.var) * noise


class Encoder(nn.Module):
    def __init__(self, x_dim: int, n_classes: int, latent_dim: int, hidden_dim: int = 64):
        super().__init__()
        self.x_dim = x_dim
        self.n_classes = n_classes
        self.latent_dim = latent_dim
        self.t_net = MLP([x_dim, hidden_dim, 1])  # g5
        self.y1_net = MLP([x_dim, hidden_dim, n_classes])  # g6
        self.y0_net = MLP([x_dim, hidden_dim, n_classes])  # g7
        # Logits are lifted to the feature width unless they already match it.
        self.y_proj = nn.Linear(n_classes, x_dim) if n_classes != x_dim else None
        self.shared = MLP([x_dim, hidden_dim, hidden_dim])  # g0
        self.mu0_net = MLP([hidden_dim, hidden_dim, latent_dim])  # g1
        self.var0_net = MLP([hidden_dim, hidden_dim, latent_dim])  # g2
        self.mu1_net = MLP([hidden_dim, hidden_dim, latent_dim])  # g3
        self.var1_net = MLP([hidden_dim, hidden_dim, latent_dim])  # g4

    def encode_t(self, x: torch.Tensor) -> torch.Tensor:
        return self.t_net(x).squeeze(-1)

    def encode_y_arms(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.y0_net(x), self.y1_net(x)

    def encode_y(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        y0, y1 = self.encode_y_arms(x)
        return gate(t, y1, y0)

    def shared_rep(self, x: torch.Tensor, y_logits: torch.Tensor) -> torch.Tensor:
        scale = y_logits if self.y_proj is None else self.y_proj(y_logits)
        return self.shared(x * scale)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> PosteriorParams:
        if not torch.isfinite(x).all():
            raise ValueError("encoder input contains non-finite values")
        t_logit = self.encode_t(x)
        y0, y1 = self.encode_y_arms(x)
        y_logits = gate(t, y1, y0)
        h = self.shared_rep(x, y_logits)
        mu0, var0 = self.mu0_net(h), squash_variance(self.var0_net(h))
        mu1, var1 = self.mu1_net(h), squash_variance(self.var1_net(h))
        return PosteriorParams(
            t_logit=t_logit,
            y_logits_t0=y0,
            y_logits_t1=y1,
            y_logits=y_logits,
            mu_t0=mu0,
            var_t0=var0,
            mu_t1=mu1,
            var_t1=var1,
            mu=gate(t, mu1, mu0),
            var=gate(t, var1, var0),
        )
