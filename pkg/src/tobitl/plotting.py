"""Static figures written next to the CSV outputs.

Uses the non-interactive Agg backend so the CLI works without a display.
"""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_emse_curves", "plot_process", "plot_bootstrap"]

STYLE = {
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _grid_shape(k: int) -> tuple[int, int]:
    cols = min(k, 3 if k > 4 else 2)
    return -(-k // cols), cols


def plot_emse_curves(metrics: Sequence, path, coords=None) -> Path:
    """EMSE against sample size: one panel per coordinate, one line per estimator."""
    metrics = sorted(metrics, key=lambda m: m.n)
    ns = np.array([m.n for m in metrics])
    labels = metrics[0].labels
    k = metrics[0].emse.shape[1]
    coords = coords or [f"L{j}" for j in range(k)]
    rows, cols = _grid_shape(k)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.6 * rows),
                                 squeeze=False)
        for c in range(rows * cols):
            ax = axes.flat[c]
            if c >= k:
                ax.set_visible(False)
                continue
            for e, label in enumerate(labels):
                ax.plot(ns, [m.emse[e, c] for m in metrics], marker="o", ms=3,
                        label=label)
            ax.set_title(coords[c])
            ax.set_xlabel("n")
            ax.set_ylabel("EMSE")
        axes.flat[0].legend()
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return Path(path)


def plot_process(taus, coefs, names, estimates: dict, path, degenerate=None) -> Path:
    """Coefficient paths of the quantile process with the L-estimates as horizontal lines."""
    coefs = np.asarray(coefs)
    k = coefs.shape[1]
    rows, cols = _grid_shape(k)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.4 * rows),
                                 squeeze=False)
        for c in range(rows * cols):
            ax = axes.flat[c]
            if c >= k:
                ax.set_visible(False)
                continue
            ax.plot(taus, coefs[:, c], color="0.2", lw=1)
            if degenerate is not None and np.any(degenerate):
                ax.plot(np.asarray(taus)[degenerate], coefs[degenerate, c], "x",
                        color="tab:red", ms=3)
            for label, value in estimates.items():
                ax.axhline(value[c], lw=0.8, ls="--", label=label, color=None)
            ax.set_title(names[c])
            ax.set_xlabel("tau")
        axes.flat[0].legend()
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return Path(path)


def plot_bootstrap(replicates, point, names, path) -> Path:
    """Replicate deviations from the original-data estimate, one box per coefficient."""
    dev = np.asarray(replicates) - np.asarray(point)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(names)), 3.0))
        ax.boxplot(dev, showfliers=True)
        ax.set_xticks(np.arange(1, len(names) + 1), names, rotation=45, ha="right")
        ax.axhline(0.0, color="0.4", lw=0.8)
        ax.set_ylabel("replicate - estimate")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return Path(path)
