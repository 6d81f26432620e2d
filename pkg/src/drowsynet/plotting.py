"""Matplotlib figures written straight to image files (no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def learning_curves(records: Sequence, path, title: str = "") -> Path:
    """Loss and accuracy per epoch, one line per split."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    for split in sorted({r.split for r in records}):
        rows = [r for r in records if r.split == split]
        ep = [r.epoch for r in rows]
        ax_loss.plot(ep, [r.loss for r in rows], marker="o", label=split)
        ax_acc.plot(ep, [r.accuracy for r in rows], marker="o", label=split)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend(loc="lower right")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def confusion_figure(cm: np.ndarray, class_names: Sequence[str], path, title: str = "") -> Path:
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(3.8, 3.4))
    ax.imshow(cm, cmap="Blues")
    for (i, j), v in np.ndenumerate(cm):
        ax.text(j, i, str(int(v)), ha="center", va="center",
                color="white" if v > cm.max() / 2 else "black")
    ax.set_xticks(range(len(class_names)), class_names)
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def ablation_figure(variants: dict[str, Sequence[float]], path, title: str = "") -> Path:
    """Bar per variant at the seed mean, with the individual seeds overlaid."""
    names = list(variants)
    means = [float(np.mean(variants[n])) for n in names]
    fig, ax = plt.subplots(figsize=(1.6 * len(names) + 1.5, 3.5))
    ax.bar(range(len(names)), means, color="#8fb3d9")
    for k, n in enumerate(names):
        ax.scatter([k] * len(variants[n]), variants[n], color="black", s=10, zorder=3)
        ax.text(k, means[k] + 0.01, f"{means[k]:.3f}", ha="center", va="bottom")
    ax.set_xticks(range(len(names)), names)
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.05)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
