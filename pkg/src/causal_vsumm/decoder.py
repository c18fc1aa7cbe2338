"""Model network: p(z), p(x|z), p(t|z) and the treatment-gated p(y|z,t)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import gate
from .nets import MLP

LOG_2PI = math.log(2 * math.pi)


def log_prior(z: torch.Tensor) -> torch.Tensor:
    """Standard-normal log density summed over the last axis."""
    return -0.5 * (z**2 + LOG_2PI).sum(-1)


def log_px(x: torch.Tensor, mean: torch.Tensor) -> torch.Tensor:
    """Unit-variance factorised Gaussian log-likelihood over the last axis."""
    return -0.5 * ((x - mean) ** 2).sum(-1) - 0.5 * x.shape[-1] * LOG_2PI


def log_bernoulli(t: torch.Tensor, logit: torch.Tensor) -> torch.Tensor:
    return -F.binary_cross_entropy_with_logits(logit, t.to(logit.dtype), reduction="none")


def log_categorical(y: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Log-probability of integer class ``y`` under softmax(logits).

    With two classes this equals the logistic form on the logit difference.
    """
    return torch.log_softmax(logits, dim=-1).gather(-1, y.long().unsqueeze(-1)).squeeze(-1)


@dataclass
class DecoderOutputs:
    x_mean: torch.Tensor
    t_logit: torch.Tensor
    y_logits_t0: torch.Tensor
    y_logits_t1: torch.Tensor


class Decoder(nn.Module):
    def __init__(self, x_dim: int, n_classes: int, latent_dim: int, hidden_dim: int = 64):
        super().__init__()
        self.x_net = MLP([latent_dim, hidden_dim, x_dim])
        self.t_net = MLP([latent_dim, hidden_dim, 1])  # f1
        self.y1_net = MLP([latent_dim, hidden_dim, n_classes])  # f2
        self.y0_net = MLP([latent_dim, hidden_dim, n_classes])  # f3

    def decode_x(self, z: torch.Tensor) -> torch.Tensor:
        return self.x_net(z)

    def decode_t(self, z: torch.Tensor) -> torch.Tensor:
        return self.t_net(z).squeeze(-1)

    def decode_y(self, z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return gate(t, self.y1_net(z), self.y0_net(z))

    def forward(self, z: torch.Tensor) -> DecoderOutputs:
        return DecoderOutputs(self.decode_x(z), self.decode_t(z), self.y0_net(z), self.y1_net(z))
