"""Figures written next to the delimited reports."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

METRIC_LABELS = {"mse": "MSE", "mae": "MAE", "ndcg_at_5": "nDCG@5"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training(loss_trace: Sequence[float], val_ndcg: Sequence[float], path, title: str = "") -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        epochs = range(1, len(loss_trace) + 1)
        ax.plot(epochs, loss_trace, marker="o", color="tab:blue", label="train MSE")
        ax.set_xlabel("epoch")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_ylabel("train MSE", color="tab:blue")
        if len(val_ndcg) and all(v == v for v in val_ndcg):
            ax2 = ax.twinx()
            ax2.plot(epochs, val_ndcg, marker="s", color="tab:orange", label="valid nDCG@5")
            ax2.set_ylabel("valid nDCG@5", color="tab:orange")
            ax2.spines["top"].set_visible(False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_relative(deltas: Mapping[str, Mapping[str, float | None]], path, baseline: str = "baseline") -> Path:
    """Grouped bars of percentage change per metric, one group per model."""
    labels = [k for k in deltas if k != baseline] or list(deltas)
    metrics = list(METRIC_LABELS)
    width = 0.8 / len(metrics)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels) + 1.5), 3.0))
        for j, m in enumerate(metrics):
            xs = [i + (j - (len(metrics) - 1) / 2) * width for i in range(len(labels))]
            ys = [deltas[k].get(m) or 0.0 for k in labels]
            ax.bar(xs, ys, width=width, label=METRIC_LABELS[m])
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=20, ha="right")
        ax.set_ylabel(f"% change vs {baseline}")
        ax.legend(frameon=False, ncol=len(metrics), loc="lower center", bbox_to_anchor=(0.5, 1.0))
        return _save(fig, path)
