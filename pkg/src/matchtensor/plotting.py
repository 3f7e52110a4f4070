"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def loss_curve(curve: Sequence[dict], path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for split, style in (("train", "-"), ("validation", "o-")):
        pts = [(r["epoch"], r["loss"]) for r in curve if r["split"] == split]
        if pts:
            x, y = zip(*pts)
            ax.plot(x, y, style, label=split, alpha=0.5 if split == "train" else 1.0, markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def pr_curves(curves: Mapping[str, Sequence[tuple]], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, pts in curves.items():
        ax.plot([p[2] for p in pts], [p[1] for p in pts], label=name)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend()
    return _save(fig, path)


def size_sweep(rows: Mapping[str, Sequence[dict]], path: str | Path) -> Path:
    """Test loss against training fraction, one line per architecture."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rs in rows.items():
        ax.plot([r["fraction"] for r in rs], [r["test_loss"] for r in rs], "o-", label=name)
    ax.set_xscale("log")
    ax.set_xlabel("fraction of training queries")
    ax.set_ylabel("test cross-entropy")
    ax.legend()
    return _save(fig, path)


def delta_bars(deltas: Mapping[str, Mapping[str, float]], path: str | Path, baseline: str = "baseline") -> Path:
    """Grouped bars of percent change per metric for each candidate."""
    names = list(deltas)
    metrics = list(next(iter(deltas.values()))) if names else []
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(names), 1)
    for i, n in enumerate(names):
        ax.bar([j + i * width for j in range(len(metrics))], [deltas[n][m] for m in metrics], width, label=n)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(metrics))])
    ax.set_xticklabels(metrics)
    ax.axhline(0, color="black", linewidth=0.8)
    ax.set_ylabel(f"% change vs {baseline}")
    ax.legend()
    return _save(fig, path)
