"""Matplotlib figures for reports: per-centre comparisons, p sweeps,
training curves and saliency panels. Everything renders to files."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
BASELINE_COLOUR = "#7f7f7f"
AUGMENTED_COLOUR = "#d62728"


def figsize(width: float = 5.0, ratio: float | None = None) -> tuple[float, float]:
    golden = (math.sqrt(5) - 1.0) / 2.0
    return width, width * (ratio or golden)


def save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_centre_comparison(rows: Sequence[dict], path: str | Path, metric: str = "dice", title: str | None = None) -> Path:
    """Grouped bars of baseline vs augmented held-out scores, one group per centre.

    ``rows`` are ``CentreRow.to_dict()`` mappings.
    """
    rows = [r for r in rows if r.get("baseline") and r.get("augmented")]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(max(3.5, 0.9 * len(rows) + 2)))
        x = np.arange(len(rows))
        base = [r["baseline"][metric] for r in rows]
        aug = [r["augmented"][metric] for r in rows]
        ax.bar(x - 0.2, base, 0.4, label="baseline", color=BASELINE_COLOUR)
        bars = ax.bar(x + 0.2, aug, 0.4, label="saliency masking", color=AUGMENTED_COLOUR)
        for b, r in zip(bars, rows):
            p = r["augmented"].get("p")
            if p is not None:
                ax.annotate(f"{round(p * 100)}%", (b.get_x() + b.get_width() / 2, b.get_height()),
                            ha="center", va="bottom", fontsize=7)
        ax.set_xticks(x, [f"centre {r['centre']}" for r in rows])
        ax.set_ylabel(f"held-out {metric}")
        ax.set_ylim(0, 1.05)
        ax.legend(frameon=False, loc="lower right")
        if title:
            ax.set_title(title)
        return save(fig, path)


def plot_sweep(sweep_rows: Sequence[dict], path: str | Path, title: str | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(3.5))
        ps = [r["p"] for r in sweep_rows]
        for metric, marker in (("dice", "o"), ("recall", "s"), ("accuracy", "^")):
            ax.plot(ps, [r[metric] for r in sweep_rows], marker=marker, label=metric)
        best = [r for r in sweep_rows if r.get("best")]
        if best:
            ax.axvline(best[0]["p"], color="k", lw=0.6, ls=":")
        ax.set_xlabel("masking probability p")
        ax.set_ylabel("held-out score")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        return save(fig, path)


def plot_curves(curves: dict[str, dict[str, Sequence[float]]], path: str | Path) -> Path:
    """Training loss and validation Dice per run; ``curves[name] = {"loss": [...], "val": [...]}``."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=figsize(7.0, 0.38))
        for name, c in curves.items():
            epochs = np.arange(1, len(c["loss"]) + 1)
            a1.plot(epochs, c["loss"], label=name)
            a2.plot(epochs, c["val"], label=name)
        a1.set_xlabel("epoch")
        a1.set_ylabel("training loss")
        a2.set_xlabel("epoch")
        a2.set_ylabel("validation Dice")
        a2.legend(frameon=False, fontsize=6)
        return save(fig, path)


def plot_saliency_panel(images: Sequence[np.ndarray], cams: Sequence[np.ndarray], keep_masks: Sequence[np.ndarray],
                        path: str | Path, titles: Sequence[str] | None = None) -> Path:
    """Image / GradCAM / keep-mask rows, one column per sample."""
    n = len(images)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, n, figsize=(1.6 * n, 5.0), squeeze=False)
        for j in range(n):
            axes[0, j].imshow(np.clip(images[j], 0, 1))
            axes[1, j].imshow(cams[j], cmap="magma", vmin=0, vmax=1)
            axes[2, j].imshow(keep_masks[j], cmap="gray", vmin=0, vmax=1)
            if titles:
                axes[0, j].set_title(titles[j], fontsize=7)
        for ax in axes.ravel():
            ax.set_xticks([])
            ax.set_yticks([])
        for ax, label in zip(axes[:, 0], ("image", "GradCAM", "keep-mask")):
            ax.set_ylabel(label)
        return save(fig, path)
