"""Post-hoc plots from a metrics CSV; never called by the training loop."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .trainer import read_metrics


def _moving_average(values, window):
    if window <= 1:
        return np.asarray(values)
    kernel = np.ones(window) / window
    padded = np.concatenate([np.full(window - 1, values[0]), values])
    return np.convolve(padded, kernel, mode="valid")


def plot_losses(metrics_path, out_path, smooth: int = 1) -> Path:
    """Overlay the two competing generator losses per epoch (adversarial blue, L1 orange)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_metrics(metrics_path)
    if not rows:
        raise ValueError(f"{metrics_path} has no epoch rows")
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, _moving_average([r["l_g_dis"] for r in rows], smooth), color="tab:blue",
            label="generator adversarial loss")
    ax.plot(epochs, _moving_average([r["l_g_l1"] for r in rows], smooth), color="tab:orange",
            label="generator multi-scale L1 loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path
