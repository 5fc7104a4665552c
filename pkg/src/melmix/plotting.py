"""Figure rendering for the report paths. All figures go to files (Agg)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_spectrogram_grid",
    "save_varl_bars",
    "save_loss_curve",
    "save_histogram",
]


def save_spectrogram_grid(panels, path, suptitle=None) -> None:
    """Heatmap row of (title, T x F grid) panels, shared color scale."""
    panels = list(panels)
    grids = [np.asarray(g) for _, g in panels]
    vmin = min(g.min() for g in grids)
    vmax = max(g.max() for g in grids)
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.2), squeeze=False)
    for ax, (title, grid) in zip(axes[0], panels):
        im = ax.imshow(
            np.asarray(grid).T, origin="lower", aspect="auto", vmin=vmin, vmax=vmax,
            cmap="magma",
        )
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("time")
        ax.set_ylabel("frequency")
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.85)
    if suptitle:
        fig.suptitle(suptitle)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_varl_bars(labels, values, path, title="Laplacian-variance smoothness") -> None:
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(labels)), 3.6))
    ax.bar(range(len(labels)), values, color="tab:blue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("Var_L")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curve(curve, path, ylabel="loss") -> None:
    steps = [s for s, _ in curve]
    losses = [l for _, l in curve]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(steps, losses)
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    ax.set_title("training curve")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_histogram(edges, counts, path, title="marginal value distribution") -> None:
    centers = 0.5 * (np.asarray(edges[:-1]) + np.asarray(edges[1:]))
    width = edges[1] - edges[0]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(centers, counts, width=width * 0.95, color="tab:purple")
    ax.set_xlabel("log-mel value")
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
