"""Figures written next to the text reports: masks, reachability, loss curves, accuracy."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .layout import SequenceLayout  # noqa: E402
from .masks import AttentionMask  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0
# blocked, causal-open, unlocked above the diagonal
MASK_COLORS = ListedColormap(["#f2f2f2", "#9a9a9a", "#2f6db5"])

plt.rc("font", size=10)
plt.rc("axes", labelsize=10, titlesize=11)
plt.rc("legend", fontsize=9)
plt.rcParams["savefig.dpi"] = 120
# keep PNG bytes free of version/date metadata
_PNG_META = {"Software": None}


def new_figure(width: float = 6.0, height: float | None = None):
    fig, ax = plt.subplots(figsize=(width, height or width * GOLDEN), facecolor="w")
    return fig, ax


def save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata=_PNG_META if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def _segment_edges(ax, layout: SequenceLayout | None, n: int) -> None:
    if layout is None:
        return
    for start in layout.starts[1:]:
        ax.axhline(start - 0.5, color="k", lw=0.6)
        ax.axvline(start - 0.5, color="k", lw=0.6)
    centers = [start + seg.length / 2 - 0.5 for seg, start in zip(layout.segments, layout.starts)]
    names = [seg.role.name.lower() for seg in layout.segments]
    ax.set_xticks(centers, names, rotation=45, ha="right")
    ax.set_yticks(centers, names)


def plot_mask(mask: AttentionMask, path, title: str = "", layout: SequenceLayout | None = None) -> Path:
    """Grey = causal-open, blue = unlocked above the diagonal, white = blocked."""
    n = mask.n
    allowed = mask.allowed
    codes = allowed.astype(int) + (allowed & np.triu(np.ones((n, n), bool), k=1))
    fig, ax = new_figure(4.0, 4.0)
    ax.imshow(codes, cmap=MASK_COLORS, vmin=0, vmax=2, interpolation="nearest")
    _segment_edges(ax, layout, n)
    ax.set_xlabel("key position j")
    ax.set_ylabel("query position i")
    ax.set_title(title)
    return save(fig, path)


def plot_reach(reach: np.ndarray, path, title: str = "", leaky: Sequence[tuple[int, int]] = (),
               layout: SequenceLayout | None = None) -> Path:
    fig, ax = new_figure(4.0, 4.0)
    ax.imshow(reach, cmap="Greys", vmin=0, vmax=1.6, interpolation="nearest")
    if leaky:
        p, q = zip(*leaky)
        ax.scatter(q, p, marker="x", color="#c0392b", s=30, label="leaky (loss row, future source)")
        ax.legend(loc="lower left", frameon=False)
    _segment_edges(ax, layout, reach.shape[0])
    ax.set_title(title)
    return save(fig, path)


def plot_loss_curves(curves: Mapping[str, np.ndarray], path, window: int = 50) -> Path:
    fig, ax = new_figure(6.5)
    for label, losses in curves.items():
        losses = np.asarray(losses, dtype=float)
        w = max(1, min(window, len(losses)))
        smooth = np.convolve(losses, np.ones(w) / w, mode="valid")
        ax.plot(np.arange(len(smooth)) + w - 1, smooth, lw=1.2, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel(f"training loss ({window}-step mean)")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    return save(fig, path)


def plot_accuracy(rows: Sequence[Mapping], path, chance: float | None = None) -> Path:
    """Grouped bars: one group per task, one bar per compare row."""
    tasks = sorted({r["task"] for r in rows})
    labels = list(dict.fromkeys(r["row"] for r in rows))
    width = 0.8 / max(1, len(labels))
    fig, ax = new_figure(6.5)
    for k, label in enumerate(labels):
        vals = [next((r["acc_mean"] for r in rows if r["row"] == label and r["task"] == t), np.nan) for t in tasks]
        ax.bar(np.arange(len(tasks)) + k * width, vals, width, label=label)
    if chance is not None:
        ax.axhline(chance, color="k", ls="--", lw=0.8, label="chance")
    ax.set_xticks(np.arange(len(tasks)) + width * (len(labels) - 1) / 2, tasks)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("exact-match accuracy")
    ax.legend(frameon=False, loc="lower right")
    return save(fig, path)
