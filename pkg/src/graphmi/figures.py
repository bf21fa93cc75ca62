"""Matplotlib figures rendered next to the delimited outputs.

All functions write PNG files and never open a display (Agg backend).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .train import MetricsRecord


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or values.size < window:
        return values
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def plot_convergence(records: list[MetricsRecord], out_path: str,
                     window: int = 5) -> None:
    """Loss terms per epoch, with a moving-average overlay per term."""
    epochs = np.array([r.epoch for r in records])
    terms = [
        ("supervised", np.array([r.loss_sup for r in records])),
        ("unsupervised", np.array([r.loss_unsup for r in records])),
        ("transfer", np.array([r.loss_transfer for r in records])),
        ("total", np.array([r.loss_total for r in records])),
    ]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, values in terms:
        if np.allclose(values, 0.0):
            continue
        (line,) = ax.plot(epochs, values, alpha=0.35, lw=1)
        sm = _smooth(values, window)
        ax.plot(epochs[len(epochs) - len(sm):], sm, lw=2,
                color=line.get_color(), label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    ax.set_title("training loss terms")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_fold_accuracies(fold_accs: dict[str, list[float]], out_path: str,
                         title: str = "cross-validation accuracy") -> None:
    """Per-fold accuracies for one or more embedding variants."""
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(1, len(fold_accs))
    for i, (name, accs) in enumerate(fold_accs.items()):
        pos = np.arange(len(accs)) + i * width
        ax.bar(pos, accs, width=width, label=f"{name} ({100 * np.mean(accs):.1f}%)")
    ax.set_xlabel("fold")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, loc="lower right")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_error_ratios(rows: list[dict], out_path: str) -> None:
    """Error ratios per arm; the 1.0 line marks the supervised baseline."""
    names = [r["name"] for r in rows]
    ratios = [r["error_ratio"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(len(rows)), ratios)
    ax.axhline(1.0, color="k", lw=1, ls="--")
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("error ratio vs supervised")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
