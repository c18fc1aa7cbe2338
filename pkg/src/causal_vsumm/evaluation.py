"""Budgeted summary selection and accuracy / macro-F1 scoring."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .model import CausalVideoSummarizer, CorpusTensors


@dataclass
class SummarySelection:
    pair_id: str
    indices: list[int]
    budget: int


def select_summary(scores, budget: int, tie_scores=None, pair_id: str = "") -> SummarySelection:
    """Top-``budget`` frames by score, returned in ascending frame order.

    Ties are broken by ``tie_scores`` (higher first), then by the smaller index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if budget < 0:
        raise ValueError("budget must be non-negative")
    tie = np.zeros_like(scores) if tie_scores is None else np.asarray(tie_scores, dtype=np.float64)
    # lexsort uses the last key as primary.
    order = np.lexsort((np.arange(len(scores)), -tie, -scores))
    chosen = sorted(int(i) for i in order[: min(budget, len(scores))])
    return SummarySelection(pair_id, chosen, budget)


def accuracy(preds, gold) -> float:
    preds, gold = np.asarray(preds), np.asarray(gold)
    if preds.shape != gold.shape or preds.size == 0:
        raise ValueError("preds and gold must be non-empty and equally shaped")
    return float((preds == gold).mean())


def f1(preds, gold) -> float:
    """Macro F1 over the classes present in either ``preds`` or ``gold``."""
    preds, gold = np.asarray(preds).ravel(), np.asarray(gold).ravel()
    if preds.shape != gold.shape or preds.size == 0:
        raise ValueError("preds and gold must be non-empty and equally shaped")
    scores = []
    for c in np.union1d(preds, gold):
        tp = np.sum((preds == c) & (gold == c))
        fp = np.sum((preds == c) & (gold != c))
        fn = np.sum((preds != c) & (gold == c))
        scores.append(2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


@dataclass
class Predictions:
    pair_ids: list[str]
    classes: np.ndarray  # (N, F)
    probs: np.ndarray  # (N, F, S)
    treatments: np.ndarray  # (N, F), the t used for decoding


def predict_scores(model: CausalVideoSummarizer, data: CorpusTensors, observed_treatment: bool = False,
                   n_samples: int = 0, seed: int = 0, batch_size: int = 16) -> Predictions:
    """Argmax class per frame; on ties the smaller class wins."""
    model.eval()
    generator = torch.Generator().manual_seed(seed)
    probs, ts = [], []
    for start in range(0, len(data), batch_size):
        batch = data.subset(list(range(start, min(start + batch_size, len(data)))))
        t = batch.treatments if observed_treatment else None
        p, t_used = model.predict_proba(batch.frame_feats, batch.query_vecs, t, n_samples, generator)
        probs.append(p.double().numpy())
        ts.append(t_used.numpy())
    probs = np.concatenate(probs)
    return Predictions(list(data.pair_ids), probs.argmax(-1), probs, np.concatenate(ts))


def selection_scores(pred: Predictions, row: int) -> tuple[np.ndarray, np.ndarray]:
    """Primary key (predicted class as an ordinal) and tie key (its probability)."""
    classes = pred.classes[row]
    return classes.astype(np.float64), np.take_along_axis(pred.probs[row], classes[:, None], -1)[:, 0]


def evaluate(model, data: CorpusTensors, budget: int = 30, observed_treatment: bool = False, n_samples: int = 0,
             seed: int = 0) -> tuple[list[dict], dict]:
    """Per-pair records and an aggregate record (metrics pooled over all frames)."""
    pred = predict_scores(model, data, observed_treatment, n_samples, seed)
    gold = data.labels.numpy()
    records = []
    for i, pid in enumerate(pred.pair_ids):
        key, tie = selection_scores(pred, i)
        records.append({
            "pair_id": pid,
            "accuracy": accuracy(pred.classes[i], gold[i]),
            "f1": f1(pred.classes[i], gold[i]),
            "selected_indices": select_summary(key, budget, tie, pid).indices,
        })
    aggregate = {
        "aggregate": True,
        "n_pairs": len(records),
        "accuracy": accuracy(pred.classes, gold),
        "f1": f1(pred.classes, gold),
        "budget": budget,
    }
    return records, aggregate


def metrics(model, data: CorpusTensors, observed_treatment: bool = False) -> dict:
    pred = predict_scores(model, data, observed_treatment)
    gold = data.labels.numpy()
    return {"accuracy": accuracy(pred.classes, gold), "f1": f1(pred.classes, gold)}


def write_report(records: list[dict], aggregate: dict, path, config: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        summary = dict(aggregate)
        if config is not None:
            summary["config"] = config
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    return path
