"""Multi-modal feature processing: (video, query) -> feature map x.

Frames are turned into per-frame vectors by a pluggable featurizer, queries
into bag-of-words counts, and :class:`Fusion` maps both to a feature map of
shape (C, F, D).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .dataset import TARGET_LEN, QueryVideoPair

CHANNEL_MEAN = np.array([0.4280, 0.4106, 0.3589])
CHANNEL_STD = np.array([0.2737, 0.2631, 0.2601])


@dataclass(frozen=True)
class FeaturizerConfig:
    visual_dim: int = 32
    bow_vocab_size: int = 30
    channels: int = 8
    feature_dim: int = 16
    upsample: int = 2
    pool_size: int = 4
    backend: str = "random_projection"
    seed: int = 0
    mean: tuple = tuple(CHANNEL_MEAN)
    std: tuple = tuple(CHANNEL_STD)

    def __post_init__(self):
        for name in ("visual_dim", "bow_vocab_size", "channels", "feature_dim", "upsample", "pool_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.feature_dim % self.upsample:
            raise ValueError("feature_dim must be a multiple of upsample")


def normalize(frames: np.ndarray, mean=CHANNEL_MEAN, std=CHANNEL_STD) -> np.ndarray:
    """Per-channel (x - mean) / std for frames shaped (..., 3, H, W)."""
    mean = np.asarray(mean, dtype=np.float64)[:, None, None]
    std = np.asarray(std, dtype=np.float64)[:, None, None]
    return (np.asarray(frames, dtype=np.float64) - mean) / std


def _area_pool(frames: np.ndarray, size: int) -> np.ndarray:
    """Downsample (F, 3, H, W) to (F, 3, size, size) by block averaging.

    H and W must be multiples of ``size`` or smaller than it (then left alone).
    """
    f, c, h, w = frames.shape
    sh, sw = min(size, h), min(size, w)
    if h % sh or w % sw:
        raise ValueError(f"frame size {h}x{w} is not divisible into {sh}x{sw} blocks")
    return frames.reshape(f, c, sh, h // sh, sw, w // sw).mean(axis=(3, 5))


class RandomProjectionFeaturizer:
    """Desk-scale stand-in for a pretrained CNN: normalise, area-pool, and
    project with a fixed Gaussian matrix drawn from ``config.seed``."""

    def __init__(self, config: FeaturizerConfig):
        self.config = config
        self._projections: dict[int, np.ndarray] = {}

    def _projection(self, in_dim: int) -> np.ndarray:
        if in_dim not in self._projections:
            rng = np.random.default_rng(self.config.seed)
            self._projections[in_dim] = rng.standard_normal((in_dim, self.config.visual_dim)) / np.sqrt(in_dim)
        return self._projections[in_dim]

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ValueError(f"frames must have shape (F, 3, H, W), got {frames.shape}")
        pooled = _area_pool(normalize(frames, self.config.mean, self.config.std), self.config.pool_size)
        flat = pooled.reshape(len(frames), -1)
        return flat @ self._projection(flat.shape[1])


class PrecomputedFeaturizer:
    """Backend for pairs that already carry ``frame_features``."""

    def __init__(self, config: FeaturizerConfig):
        self.config = config

    def __call__(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.config.visual_dim:
            raise ValueError(f"expected features of shape (F, {self.config.visual_dim}), got {features.shape}")
        return features


BACKENDS = {"random_projection": RandomProjectionFeaturizer, "precomputed": PrecomputedFeaturizer}


def make_featurizer(config: FeaturizerConfig):
    try:
        return BACKENDS[config.backend](config)
    except KeyError:
        raise ValueError(f"unknown featurizer backend {config.backend!r}; choose from {sorted(BACKENDS)}") from None


def featurize_frames(frames, featurizer, n_frames: int = TARGET_LEN) -> np.ndarray:
    if len(frames) != n_frames:
        raise ValueError(f"expected {n_frames} frames, got {len(frames)}")
    return featurizer(frames)


# --- text ---------------------------------------------------------------------


class Vocabulary:
    """Token -> index map. Index ``len(vocab)`` is the out-of-vocabulary bucket."""

    def __init__(self, tokens):
        self.tokens = list(dict.fromkeys(tokens))
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @property
    def oov_index(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_corpus(cls, corpus: list[QueryVideoPair]) -> "Vocabulary":
        return cls(sorted({tok for pair in corpus for tok in pair.query}))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text("".join(tok + "\n" for tok in self.tokens))
        return path

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(line.strip() for line in Path(path).read_text().splitlines() if line.strip())


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def featurize_query(tokens, vocab: Vocabulary) -> np.ndarray:
    vec = np.zeros(len(vocab) + 1)
    for tok in tokens:
        vec[vocab.index.get(tok, vocab.oov_index)] += 1
    return vec


# --- fusion ---------------------------------------------------------------------


class Fusion(nn.Module):
    """Concatenate each frame vector with the query vector, apply an affine
    map and tanh, view as (C, D / upsample) and repeat along D.

    Input shapes: frame_feats (B, F, visual_dim), query_vec (B, V + 1).
    Output: (B, C, F, D).
    """

    def __init__(self, visual_dim: int, query_dim: int, channels: int, feature_dim: int, upsample: int = 2):
        super().__init__()
        if feature_dim % upsample:
            raise ValueError("feature_dim must be a multiple of upsample")
        self.visual_dim = visual_dim
        self.query_dim = query_dim
        self.channels = channels
        self.feature_dim = feature_dim
        self.upsample = upsample
        self.linear = nn.Linear(visual_dim + query_dim, channels * (feature_dim // upsample))

    def forward(self, frame_feats: torch.Tensor, query_vec: torch.Tensor) -> torch.Tensor:
        if frame_feats.shape[-1] != self.visual_dim or query_vec.shape[-1] != self.query_dim:
            raise ValueError(
                f"fusion expects ({self.visual_dim}, {self.query_dim}) inputs, "
                f"got ({frame_feats.shape[-1]}, {query_vec.shape[-1]})"
            )
        b, f, _ = frame_feats.shape
        joint = torch.cat([frame_feats, query_vec[:, None, :].expand(b, f, self.query_dim)], dim=-1)
        h = torch.tanh(self.linear(joint))
        h = h.view(b, f, self.channels, self.feature_dim // self.upsample).permute(0, 2, 1, 3)
        return h.repeat_interleave(self.upsample, dim=-1)
