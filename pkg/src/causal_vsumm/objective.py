"""Training objective and loop.

The objective is maximised; optimisers minimise its negation. All terms are
means over the frames of a batch, in nats.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch

from .decoder import LOG_2PI, log_bernoulli, log_categorical, log_prior, log_px
from .encoder import gate
from .model import CausalVideoSummarizer, CorpusTensors

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the objective becomes non-finite; carries the last good state."""

    def __init__(self, message, report=None, last_good_state=None, history=None):
        super().__init__(message)
        self.report = report
        self.last_good_state = last_good_state
        self.history = history or []


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    n_mc: int = 1
    kl: str = "closed_form"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.n_mc < 1:
            raise ValueError("epochs, batch_size and n_mc must be >= 1")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("learning_rate and eps must be positive")
        if self.kl not in ("closed_form", "monte_carlo"):
            raise ValueError(f"kl must be 'closed_form' or 'monte_carlo', got {self.kl!r}")


@dataclass
class LossReport:
    aux_t: float
    aux_y: float
    recon_x: float
    recon_t: float
    recon_y: float
    log_prior_term: float
    entropy_term: float
    L_auxiliary: float
    L_causal: float
    ELBO: float

    @classmethod
    def mean(cls, reports: list["LossReport"]) -> "LossReport":
        names = [f.name for f in fields(cls)]
        return cls(**{n: sum(getattr(r, n) for r in reports) / len(reports) for n in names})


def gaussian_kl(mu: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, var) || N(0, 1)) summed over the last axis."""
    return 0.5 * (mu**2 + var - 1 - torch.log(var)).sum(-1)


def causal_objective(model: CausalVideoSummarizer, batch: CorpusTensors, noise: torch.Tensor, kl: str = "closed_form",
                     target: torch.Tensor | None = None):
    """Return (L_causal, L_auxiliary, terms) for one batch.

    ``noise`` has shape (n_mc, B, F, latent_dim); the expectation under q(z|.)
    is the average over its leading axis. With ``kl="closed_form"`` the
    prior and entropy terms are exact Gaussian expectations.

    The reconstruction target is the fused feature map treated as observed
    data: by default the model's own map with gradients stopped, or an
    explicit ``target`` of shape (B, F, C * D).
    """
    t, y = batch.treatments, batch.labels
    x_map, x_frames = model.feature_map(batch.frame_feats, batch.query_vecs)
    if target is None:
        target = model.frame_slices(x_map).detach()
    post = model.encoder(x_frames, t)

    aux_t = log_bernoulli(t, post.t_logit).mean()
    aux_y = log_categorical(y, post.y_logits).mean()

    recon_x = recon_t = recon_y = prior = entropy = 0
    n_mc = noise.shape[0]
    for eps in noise:
        z = post.mu + torch.sqrt(post.var) * eps
        out = model.decoder(z)
        recon_x = recon_x + log_px(target, out.x_mean).mean() / n_mc
        recon_t = recon_t + log_bernoulli(t, out.t_logit).mean() / n_mc
        recon_y = recon_y + log_categorical(y, gate(t, out.y_logits_t1, out.y_logits_t0)).mean() / n_mc
        if kl == "monte_carlo":
            prior = prior + log_prior(z).mean() / n_mc
            entropy = entropy - post.log_q(z).mean() / n_mc
    if kl == "closed_form":
        prior = -0.5 * (post.mu**2 + post.var + LOG_2PI).sum(-1).mean()
        entropy = 0.5 * (1 + LOG_2PI + torch.log(post.var)).sum(-1).mean()

    l_aux = aux_t + aux_y
    l_causal = l_aux + (recon_x + recon_t + recon_y + prior + entropy)
    terms = dict(
        aux_t=aux_t, aux_y=aux_y, recon_x=recon_x, recon_t=recon_t,
        recon_y=recon_y, log_prior_term=prior, entropy_term=entropy,
    )
    return l_causal, l_aux, terms


def make_report(l_causal, l_aux, terms) -> LossReport:
    l_causal, l_aux = float(l_causal.detach()), float(l_aux.detach())
    values = {k: float(torch.as_tensor(v).detach()) for k, v in terms.items()}
    report = LossReport(**values, L_auxiliary=l_aux, L_causal=l_causal, ELBO=l_causal - l_aux)
    bad = [k for k, v in asdict(report).items() if not math.isfinite(v)]
    if bad:
        raise TrainingDiverged(f"non-finite loss terms: {bad}", report=report)
    return report


def draw_noise(generator, n_mc, batch: CorpusTensors, latent_dim, dtype):
    n, f = batch.labels.shape
    return torch.randn((n_mc, n, f, latent_dim), generator=generator, dtype=dtype)


@dataclass
class TrainResult:
    model: CausalVideoSummarizer
    history: list[dict]
    steps: list[LossReport] = field(default_factory=list)


def train(model: CausalVideoSummarizer, data: CorpusTensors, config: TrainConfig, val: CorpusTensors | None = None,
          evaluate=None) -> TrainResult:
    """Maximise the causal objective with Adam.

    ``evaluate(model, tensors) -> dict`` adds validation metrics to each
    epoch record when ``val`` is given. Deterministic for a fixed seed in
    single-threaded mode.
    """
    dtype = data.frame_feats.dtype
    generator = torch.Generator().manual_seed(config.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(
        params, lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.eps
    )
    history, steps = [], []
    last_good = {k: v.clone() for k, v in model.state_dict().items()}
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(len(data), generator=generator)
        epoch_reports = []
        for start in range(0, len(data), config.batch_size):
            batch = data.subset(order[start : start + config.batch_size])
            noise = draw_noise(generator, config.n_mc, batch, model.config.latent_dim, dtype)
            l_causal, l_aux, terms = causal_objective(model, batch, noise, config.kl)
            try:
                report = make_report(l_causal, l_aux, terms)
            except TrainingDiverged as exc:
                model.load_state_dict(last_good)
                raise TrainingDiverged(
                    f"epoch {epoch}: {exc}", report=exc.report, last_good_state=last_good, history=history
                ) from None
            optimizer.zero_grad()
            (-l_causal).backward()
            optimizer.step()
            steps.append(report)
            epoch_reports.append(report)
        last_good = {k: v.clone() for k, v in model.state_dict().items()}
        record = {"epoch": epoch, **asdict(LossReport.mean(epoch_reports))}
        if evaluate is not None:
            record.update({f"train_{k}": v for k, v in evaluate(model, data).items()})
            if val is not None and len(val):
                record.update({f"val_{k}": v for k, v in evaluate(model, val).items()})
        logger.info("epoch %d: L_causal=%.4f ELBO=%.4f", epoch, record["L_causal"], record["ELBO"])
        history.append(record)
    return TrainResult(model, history, steps)


# --- checkpoints -----------------------------------------------------------------


def save_checkpoint(path, model: CausalVideoSummarizer, run_config: dict, vocab_tokens: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "blocks": model.blocks(),
        "config": run_config,
        "vocab": list(vocab_tokens),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> tuple[CausalVideoSummarizer, dict]:
    from .model import ModelConfig

    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    if payload.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('checkpoint_version')}")
    model = CausalVideoSummarizer(ModelConfig(**payload["model_config"]))
    dtype = next(iter(payload["blocks"]["mfpm"].values())).dtype
    model.to(dtype)
    model.load_blocks(payload["blocks"])
    return model, payload


def write_history(history: list[dict], path, config: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        if config is not None:
            fh.write(json.dumps({"config": config}, sort_keys=True) + "\n")
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path
