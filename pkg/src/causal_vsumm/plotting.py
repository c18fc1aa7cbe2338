"""Figures written next to the delimited outputs. Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "causal-vsumm",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # Strip the creation date so identical inputs give identical files.
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_frame_scores(expected, selected, path, gold=None, title=""):
    """Per-frame expected relevance with the selected summary frames marked below."""
    expected = np.asarray(expected)
    frames = np.arange(len(expected))
    with plt.rc_context(STYLE):
        fig, (ax, strip) = plt.subplots(
            2, 1, figsize=(7, 2.8), sharex=True, gridspec_kw={"height_ratios": [4, 1]}
        )
        ax.plot(frames, expected, color="tab:green", lw=1.2, label="predicted")
        if gold is not None:
            ax.step(frames, gold, where="mid", color="tab:red", lw=0.8, alpha=0.7, label="gold")
        ax.set_ylabel("relevance")
        ax.legend(loc="upper right", frameon=False)
        if title:
            ax.set_title(title)
        mask = np.zeros(len(expected))
        mask[list(selected)] = 1
        strip.imshow(mask[None, :], aspect="auto", cmap="Greys", vmin=0, vmax=1,
                     extent=(-0.5, len(expected) - 0.5, 0, 1))
        strip.set_yticks([])
        strip.set_xlabel("frame")
        return _save(fig, path)


def plot_history(history: list[dict], path, keys=("L_causal", "ELBO", "L_auxiliary")):
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(8, 2.8))
        for key in keys:
            left.plot(epochs, [r[key] for r in history], label=key)
        left.set_xlabel("epoch")
        left.set_ylabel("nats per frame")
        left.legend(frameon=False)
        for key in ("train_accuracy", "val_accuracy", "train_f1", "val_f1"):
            if history and key in history[0]:
                right.plot(epochs, [r[key] for r in history], label=key)
        right.set_xlabel("epoch")
        right.set_ylim(0, 1)
        right.legend(frameon=False)
        return _save(fig, path)


def plot_accuracy_hist(records: list[dict], path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.8))
        ax.hist([r["accuracy"] for r in records], bins=np.linspace(0, 1, 21), color="tab:blue")
        ax.set_xlabel("per-pair accuracy")
        ax.set_ylabel("pairs")
        return _save(fig, path)
