"""Report figures written next to the tabular outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import ScoredFrames, precision_recall_points, roc_points  # noqa: E402

_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_training(epoch_means, val_maps, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    epochs = range(1, len(epoch_means) + 1)
    ax.plot(epochs, epoch_means, marker="o", label="train loss (epoch mean)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("total loss")
    if val_maps:
        ax2 = ax.twinx()
        ax2.plot(epochs, val_maps, color="tab:orange", marker="s", label="val mAP")
        ax2.set_ylabel("val mAP")
        ax2.set_ylim(0, 1)
    ax.set_title("Training")
    _finish(fig, path)


def plot_curves(sf: ScoredFrames, path, title: str = ""):
    fpr, tpr = roc_points(sf)
    rec, prec = precision_recall_points(sf)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.6))
    a1.plot(fpr, tpr)
    a1.plot([0, 1], [0, 1], ls="--", color="grey", lw=0.8)
    a1.set_xlabel("false positive rate")
    a1.set_ylabel("true positive rate")
    a1.set_title("ROC")
    a2.step(rec, prec, where="post")
    a2.set_xlabel("recall")
    a2.set_ylabel("precision")
    a2.set_ylim(0, 1.02)
    a2.set_title("Precision-recall")
    if title:
        fig.suptitle(title)
    _finish(fig, path)


def plot_ablation(rows: list[dict], axis: str, path):
    names = [r["setting"] for r in rows]
    fig, ax = plt.subplots(figsize=(1.4 * len(rows) + 2, 3.5))
    ax.bar(names, [100 * r["map"] for r in rows], color="tab:blue")
    for i, r in enumerate(rows):
        ax.text(i, 100 * r["map"], f"{100 * r['map']:.1f}", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("test mAP (%)")
    ax.set_title(f"Ablation: {axis}")
    lo = min(100 * r["map"] for r in rows)
    ax.set_ylim(max(0, lo - 10), 100)
    _finish(fig, path)
