"""Report figures written to files (no interactive display)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def loss_curve(history, path, title: str = "training loss") -> None:
    epochs = [h.epoch + 1 for h in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(epochs, [h.train_loss for h in history], label="train")
    val = [h.val_loss for h in history]
    if any(v is not None for v in val):
        ax.semilogy(epochs, val, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("sequence loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def error_boxplot(groups: dict[str, dict[int, list[float]]], path, ylabel: str = "delta") -> None:
    """``groups[variant][horizon]`` holds per-sample errors; one box per (horizon, variant)."""
    labels, data = [], []
    horizons = sorted({h for g in groups.values() for h in g})
    for h in horizons:
        for name, by_h in groups.items():
            if h in by_h:
                labels.append(f"{name}\n{h} steps")
                data.append(by_h[h])
    fig, ax = plt.subplots(figsize=(1.6 * max(len(data), 2) + 1, 3.5))
    ax.boxplot(data)
    ax.set_xticks(range(1, len(labels) + 1), labels)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
