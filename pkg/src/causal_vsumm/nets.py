from __future__ import annotations

from torch import nn


class MLP(nn.Sequential):
    """Fully connected network with ELU between layers (none after the last)."""

    def __init__(self, sizes):
        layers = []
        for in_size, out_size in zip(sizes, sizes[1:]):
            layers.append(nn.Linear(in_size, out_size))
            layers.append(nn.ELU())
        layers.pop(-1)
        super().__init__(*layers)
