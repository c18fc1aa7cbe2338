"""Run configuration: one YAML key-value file, overridable from the CLI."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .features import FeaturizerConfig
from .objective import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # synthetic corpus
    n_pairs: int = 190
    vocab_size: int = 30
    n_score_classes: int = 3
    n_annotators: int = 3
    annotator_accuracy: float = 0.9
    frame_size: int = 8
    min_frames: int = 100
    # CVSD construction
    pair_fraction: float = 0.5
    frame_fraction: float = 0.3
    visual_treatment: str = "salt_pepper"
    textual_k: int = 2
    salt_pepper_density: float = 0.1
    blur_kernel: int = 5
    split_ratios: tuple = (0.6, 0.2, 0.2)
    frame_storage: str = "inline"
    # features
    featurizer: str = "random_projection"
    visual_dim: int = 32
    pool_size: int = 4
    channels: int = 8
    feature_dim: int = 16
    upsample: int = 2
    # model
    latent_dim: int = 8
    hidden_dim: int = 64
    attention: bool = True
    key_dim: int | None = None
    # training
    epochs: int = 50
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    n_mc: int = 1
    kl: str = "closed_form"
    dtype: str = "float32"
    num_threads: int = 1
    # evaluation
    summary_budget: int = 30
    eval_split: str = "test"
    eval_observed_treatment: bool = False
    inference_samples: int = 0
    # paths; None means the command's --out-dir
    input_dir: str | None = None

    def __post_init__(self):
        self.split_ratios = tuple(self.split_ratios)
        checks = [
            (self.n_pairs >= 1, "n_pairs must be >= 1"),
            (self.n_score_classes >= 2, "n_score_classes must be >= 2"),
            (0 <= self.pair_fraction <= 1, "pair_fraction must lie in [0, 1]"),
            (0 <= self.frame_fraction <= 1, "frame_fraction must lie in [0, 1]"),
            (self.visual_treatment in ("salt_pepper", "blur"), "visual_treatment must be salt_pepper or blur"),
            (self.frame_storage in ("inline", "ref"), "frame_storage must be inline or ref"),
            (self.textual_k >= 0, "textual_k must be >= 0"),
            (self.dtype in ("float32", "float64"), "dtype must be float32 or float64"),
            (self.eval_split in ("train", "val", "test"), "eval_split must be train, val or test"),
            (self.summary_budget >= 0, "summary_budget must be >= 0"),
            (self.latent_dim >= 1 and self.hidden_dim >= 1, "latent_dim and hidden_dim must be >= 1"),
            (self.num_threads >= 1, "num_threads must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        # Delegate the remaining checks to the component configs.
        try:
            self.train_config()
            self.featurizer_config(self.vocab_size)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        data = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            data = yaml.safe_load(path.read_text()) or {}
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: expected a mapping of keys to values")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["split_ratios"] = list(self.split_ratios)
        return out

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, batch_size=self.batch_size, seed=self.seed, n_mc=self.n_mc, kl=self.kl,
        )

    def featurizer_config(self, vocab_size: int) -> FeaturizerConfig:
        return FeaturizerConfig(
            visual_dim=self.visual_dim, bow_vocab_size=vocab_size, channels=self.channels,
            feature_dim=self.feature_dim, upsample=self.upsample, pool_size=self.pool_size,
            backend=self.featurizer, seed=self.seed,
        )
