"""Figure rendering for experiment reports.

Every delimited artifact the runner writes (predictive grids, 1-D bands, loss
histories, conjugate-check samples) gets a PNG rendered next to it. Headless
backend; nothing here is needed by the numerics.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .datasets import Dataset
from .evaluation import Grid2D

DPI = 150


def _save(fig, path):
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)


def plot_class_grid(grid: Grid2D, dataset: Dataset | None, path, title: str = "") -> None:
    """Heatmap of the predictive over the grid; training points overlaid.

    Two classes: p(class 1). More: per-cell predictive entropy.
    """
    k = grid.probs.shape[1]
    if k == 2:
        values = grid.probs[:, 1]
        label = "p(class 1)"
        vmin, vmax = 0.0, 1.0
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(grid.probs > 0, grid.probs * np.log(grid.probs), 0.0)
        values = -terms.sum(axis=1)
        label = "predictive entropy"
        vmin, vmax = None, None
    img = values.reshape(grid.ny, grid.nx)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    extent = (*grid.x_range, *grid.y_range)
    im = ax.imshow(img, origin="lower", extent=extent, aspect="auto",
                   cmap="RdBu_r", vmin=vmin, vmax=vmax)
    fig.colorbar(im, ax=ax, label=label)
    if dataset is not None:
        y = np.asarray(dataset.y, dtype=int)
        for cls, marker in ((0, "o"), (1, "s")):
            pts = dataset.x[y == cls]
            ax.scatter(pts[:, 0], pts[:, 1], marker=marker, s=30,
                       edgecolor="black", facecolor="white" if cls == 0 else "black",
                       label=f"class {cls}")
        ax.legend(loc="upper left", fontsize=8)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_band(xs: np.ndarray, mean: np.ndarray, std: np.ndarray,
              dataset: Dataset | None, path, title: str = "",
              n_stds: float = 3.0) -> None:
    """Predictive mean with a +-n_stds band, training data overlaid."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.fill_between(xs, mean - n_stds * std, mean + n_stds * std,
                    alpha=0.25, color="tab:blue", label=f"mean ± {n_stds:g} std")
    ax.plot(xs, mean, color="tab:blue", lw=1.5)
    if dataset is not None:
        ax.scatter(dataset.x[:, 0], dataset.y, s=18, color="black", zorder=3,
                   label="train data")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.legend(loc="upper left", fontsize=8)
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_history(iterations, teacher_nll, student_loss, path) -> None:
    fig, axes = plt.subplots(2, 1, figsize=(5.5, 5), sharex=True)
    axes[0].plot(iterations, teacher_nll, lw=0.8)
    axes[0].set_ylabel("teacher minibatch NLL")
    axes[1].plot(iterations, student_loss, lw=0.8, color="tab:orange")
    axes[1].set_ylabel("student batch loss")
    axes[1].set_xlabel("iteration")
    _save(fig, path)


def plot_conjugate(samples: np.ndarray, true_mean: float, true_std: float, path) -> None:
    """Sampled posterior histogram against the closed-form density."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(samples, bins=60, density=True, alpha=0.6, label="chain samples")
    xs = np.linspace(true_mean - 4 * true_std, true_mean + 4 * true_std, 400)
    pdf = np.exp(-0.5 * ((xs - true_mean) / true_std) ** 2) / (true_std * np.sqrt(2 * np.pi))
    ax.plot(xs, pdf, color="black", lw=1.5, label="exact posterior")
    ax.set_xlabel("parameter")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    _save(fig, path)
