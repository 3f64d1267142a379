"""Matplotlib renderings of training and search histories."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_train_curves(history, path) -> None:
    """Two-panel loss/accuracy figure for one training run."""
    if not history:
        return
    epochs = [r.epoch for r in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(epochs, [r.train_loss for r in history], label="train")
    ax_loss.plot(epochs, [r.val_loss for r in history], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [r.train_acc for r in history], label="train")
    ax_acc.plot(epochs, [r.val_acc for r in history], label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ga_curves(history, path) -> None:
    """Best and mean fitness per generation."""
    if not history:
        return
    generations = [r.generation for r in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(generations, [r.best_fitness for r in history], marker="o", label="best")
    ax.plot(generations, [r.mean_fitness for r in history], marker="o", label="mean")
    ax.set_xlabel("generation")
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
