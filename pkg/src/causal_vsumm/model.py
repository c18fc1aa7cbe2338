"""The full summarizer: fusion -> attention -> encoder -> decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .attention import DualAttention
from .dataset import QueryVideoPair
from .decoder import Decoder, DecoderOutputs
from .encoder import Encoder, PosteriorParams, sample_z
from .features import Fusion, Vocabulary, featurize_frames, featurize_query


@dataclass(frozen=True)
class ModelConfig:
    visual_dim: int
    query_dim: int
    n_classes: int = 3
    channels: int = 8
    feature_dim: int = 16
    upsample: int = 2
    latent_dim: int = 8
    hidden_dim: int = 64
    attention: bool = True
    key_dim: int | None = None


@dataclass
class CorpusTensors:
    """Featurised corpus ready for the model; one row per pair."""

    pair_ids: list[str]
    frame_feats: torch.Tensor  # (N, F, visual_dim)
    query_vecs: torch.Tensor  # (N, V + 1)
    treatments: torch.Tensor  # (N, F) float in {0, 1}
    labels: torch.Tensor  # (N, F) int64 gold labels

    def __len__(self):
        return len(self.pair_ids)

    def subset(self, index) -> "CorpusTensors":
        if isinstance(index, torch.Tensor):
            index = index.tolist()
        return CorpusTensors(
            [self.pair_ids[i] for i in index],
            self.frame_feats[index],
            self.query_vecs[index],
            self.treatments[index],
            self.labels[index],
        )

    def select(self, pair_ids) -> "CorpusTensors":
        pos = {pid: i for i, pid in enumerate(self.pair_ids)}
        missing = [p for p in pair_ids if p not in pos]
        if missing:
            raise KeyError(f"unknown pair ids: {missing[:5]}")
        return self.subset([pos[p] for p in pair_ids])

    def truncate(self, n_frames: int) -> "CorpusTensors":
        return CorpusTensors(
            self.pair_ids,
            self.frame_feats[:, :n_frames],
            self.query_vecs,
            self.treatments[:, :n_frames],
            self.labels[:, :n_frames],
        )


def tensorize(corpus: list[QueryVideoPair], vocab: Vocabulary, featurizer, dtype=torch.float32) -> CorpusTensors:
    feats, queries = [], []
    for pair in corpus:
        video = pair.frames if pair.frames is not None else pair.frame_features
        if pair.frames is None and featurizer.config.backend != "precomputed":
            raise ValueError(f"{pair.pair_id} has no raw frames; use the 'precomputed' featurizer")
        feats.append(featurize_frames(video, featurizer, n_frames=pair.n_frames))
        queries.append(featurize_query(pair.query, vocab))
    return CorpusTensors(
        pair_ids=[p.pair_id for p in corpus],
        frame_feats=torch.tensor(np.stack(feats), dtype=dtype),
        query_vecs=torch.tensor(np.stack(queries), dtype=dtype),
        treatments=torch.tensor(np.stack([p.treatments for p in corpus]), dtype=dtype),
        labels=torch.tensor(np.stack([p.gold_labels for p in corpus]), dtype=torch.int64),
    )


@dataclass
class ForwardPass:
    x_map: torch.Tensor  # (B, C, F, D) before attention; the reconstruction target
    x_frames: torch.Tensor  # (B, F, C * D) after attention; the encoder input
    posterior: PosteriorParams
    z: torch.Tensor
    decoded: DecoderOutputs


class CausalVideoSummarizer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.fusion = Fusion(c.visual_dim, c.query_dim, c.channels, c.feature_dim, c.upsample)
        self.attention = DualAttention(c.channels, c.key_dim)
        x_dim = c.channels * c.feature_dim
        self.encoder = Encoder(x_dim, c.n_classes, c.latent_dim, c.hidden_dim)
        self.decoder = Decoder(x_dim, c.n_classes, c.latent_dim, c.hidden_dim)
        if not c.attention:
            for p in self.attention.parameters():
                p.requires_grad_(False)

    @staticmethod
    def frame_slices(x_map: torch.Tensor) -> torch.Tensor:
        b, c, f, d = x_map.shape
        return x_map.permute(0, 2, 1, 3).reshape(b, f, c * d)

    def feature_map(self, frame_feats, query_vecs) -> tuple[torch.Tensor, torch.Tensor]:
        x_map = self.fusion(frame_feats, query_vecs)
        attended = self.attention(x_map) if self.config.attention else x_map
        return x_map, self.frame_slices(attended)

    def forward(self, frame_feats, query_vecs, t, noise) -> ForwardPass:
        x_map, x_frames = self.feature_map(frame_feats, query_vecs)
        posterior = self.encoder(x_frames, t)
        z = sample_z(posterior, noise)
        return ForwardPass(x_map, x_frames, posterior, z, self.decoder(z))

    @torch.no_grad()
    def infer_treatment(self, frame_feats, query_vecs) -> torch.Tensor:
        _, x_frames = self.feature_map(frame_feats, query_vecs)
        return (torch.sigmoid(self.encoder.encode_t(x_frames)) >= 0.5).to(x_frames.dtype)

    @torch.no_grad()
    def predict_proba(self, frame_feats, query_vecs, t=None, n_samples: int = 0, generator=None):
        """Per-frame class probabilities (B, F, S) and the treatment used.

        ``t=None`` rounds q(t|x). ``n_samples=0`` decodes the posterior mean;
        otherwise probabilities are averaged over reparameterised draws.
        """
        _, x_frames = self.feature_map(frame_feats, query_vecs)
        if t is None:
            t = (torch.sigmoid(self.encoder.encode_t(x_frames)) >= 0.5).to(x_frames.dtype)
        posterior = self.encoder(x_frames, t)
        if n_samples <= 0:
            probs = torch.softmax(self.decoder.decode_y(posterior.mu, t), dim=-1)
        else:
            probs = 0
            for _ in range(n_samples):
                noise = torch.randn(posterior.mu.shape, generator=generator, dtype=posterior.mu.dtype)
                probs = probs + torch.softmax(self.decoder.decode_y(sample_z(posterior, noise), t), dim=-1)
            probs = probs / n_samples
        return probs, t

    def blocks(self) -> dict[str, dict]:
        """Parameter blocks by module, as stored in checkpoints."""
        return {
            "mfpm": self.fusion.state_dict(),
            "attention": self.attention.state_dict(),
            "encoder": self.encoder.state_dict(),
            "decoder": self.decoder.state_dict(),
        }

    def load_blocks(self, blocks: dict[str, dict]):
        self.fusion.load_state_dict(blocks["mfpm"])
        self.attention.load_state_dict(blocks["attention"])
        self.encoder.load_state_dict(blocks["encoder"])
        self.decoder.load_state_dict(blocks["decoder"])
