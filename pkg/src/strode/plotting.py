"""Figures written next to the delimited CLI outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_timings(true_norm, inferred_norm, path, max_rows: int = 8) -> None:
    """True vs inferred normalized boundary times.

    Left: event rasters for the first ``max_rows`` sequences (true above,
    inferred below). Right: all (true, inferred) pairs against the diagonal.
    """
    true_norm = np.atleast_2d(np.asarray(true_norm, dtype=np.float64))
    inferred_norm = np.atleast_2d(np.asarray(inferred_norm, dtype=np.float64))
    fig, (ax_r, ax_s) = plt.subplots(1, 2, figsize=(10, 4))
    rows = min(max_rows, len(true_norm))
    for r in range(rows):
        y = rows - r
        ax_r.vlines(true_norm[r], y - 0.05, y + 0.35, color="tab:blue", lw=1.2)
        ax_r.vlines(inferred_norm[r], y - 0.45, y - 0.05, color="tab:orange", lw=1.2)
    ax_r.set_yticks(range(1, rows + 1))
    ax_r.set_yticklabels([str(rows - k) for k in range(rows)])
    ax_r.set_xlabel("normalized time")
    ax_r.set_ylabel("sequence")
    ax_r.plot([], [], color="tab:blue", label="true")
    ax_r.plot([], [], color="tab:orange", label="inferred")
    ax_r.legend(loc="upper right", fontsize=8)

    ax_s.scatter(true_norm.ravel(), inferred_norm.ravel(), s=6, alpha=0.4)
    ax_s.plot([0, 1], [0, 1], color="k", lw=0.8, ls="--")
    ax_s.set_xlabel("true (min-max)")
    ax_s.set_ylabel("inferred (min-max)")
    ax_s.set_xlim(-0.02, 1.02)
    ax_s.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_training_curves(metrics: list, path) -> None:
    """Training loss and validation columns against epoch."""
    epochs = [row["epoch"] for row in metrics]
    val_keys = [k for k in ("val_mse", "val_cs", "val_acc") if metrics and k in metrics[0]]
    fig, axes = plt.subplots(1, 1 + len(val_keys), figsize=(4 * (1 + len(val_keys)), 3.2))
    axes = np.atleast_1d(axes)
    axes[0].plot(epochs, [row["train_loss"] for row in metrics])
    axes[0].set_title("train loss")
    for ax, key in zip(axes[1:], val_keys):
        ax.plot(epochs, [row[key] for row in metrics])
        ax.set_title(key)
    for ax in axes:
        ax.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
