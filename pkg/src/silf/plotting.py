"""Matplotlib figure helpers for the run report.

Everything renders straight to files through the Agg backend, so report
generation works in headless environments.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import ScoreMatrix

FIG_DPI = 150

plt.rcParams.update(
    {
        "figure.facecolor": "white",
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 10,
    }
)


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def score_matrix_heatmap(matrix: ScoreMatrix, path: Path) -> Path:
    t = matrix.task_count
    grid = np.full((t, t), np.nan)
    for m in range(1, t + 1):
        grid[m - 1, :m] = matrix.row(m)
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * t, 1.0 + 0.7 * t))
    image = ax.imshow(grid, vmin=-1.0, vmax=1.0, cmap="RdYlGn")
    for m in range(t):
        for i in range(m + 1):
            ax.text(i, m, f"{grid[m, i]:.3f}", ha="center", va="center", fontsize=8)
    ax.set_xticks(range(t), [f"task {i}" for i in range(1, t + 1)])
    ax.set_yticks(range(t), [f"after {m}" for m in range(1, t + 1)])
    ax.set_xlabel("evaluated task")
    ax.set_ylabel("tasks learned so far")
    ax.set_title("SRCC score matrix")
    ax.grid(False)
    fig.colorbar(image, ax=ax, shrink=0.8)
    return _save(fig, path)


def srcc_history(matrix: ScoreMatrix, path: Path) -> Path:
    t = matrix.task_count
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    for i in range(1, t + 1):
        stages = list(range(i, t + 1))
        values = [matrix.entry(m, i) for m in stages]
        ax.plot(stages, values, marker="o", label=f"task {i}")
    ax.set_xlabel("tasks learned")
    ax.set_ylabel("SRCC")
    ax.set_title("Per-task score as the sequence grows")
    ax.set_xticks(range(1, t + 1))
    ax.legend(fontsize=8)
    return _save(fig, path)


def metric_bars(stages: dict[str, dict], path: Path) -> Path:
    names = ["average_accuracy", "average_forgetting", "average_plasticity"]
    labels = ["accuracy", "forgetting", "plasticity"]
    stage_names = list(stages)
    width = 0.8 / max(len(stage_names), 1)
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    x = np.arange(len(names))
    for s, stage in enumerate(stage_names):
        values = [stages[stage].get(name) or 0.0 for name in names]
        ax.bar(x + s * width, values, width, label=stage)
    ax.set_xticks(x + width * (len(stage_names) - 1) / 2, labels)
    ax.set_ylabel("value")
    ax.set_title("Summary metrics by stage")
    ax.legend()
    return _save(fig, path)


def ownership_bars(label_counts_per_layer: list[dict[int, int]], path: Path) -> Path:
    """Stacked per-layer bars of weight ownership (free, committed, reclaimable)."""
    all_labels = sorted({lab for counts in label_counts_per_layer for lab in counts})
    layers = np.arange(len(label_counts_per_layer))
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    bottom = np.zeros(len(layers))
    cmap = plt.get_cmap("tab20")
    for j, lab in enumerate(all_labels):
        sizes = np.array(
            [counts.get(lab, 0) / max(sum(counts.values()), 1) for counts in label_counts_per_layer]
        )
        if lab == 0:
            name, color = "free", "#cccccc"
        elif lab > 0:
            name, color = f"task {lab}", cmap(j % 20)
        else:
            name, color = f"task {-lab} (reclaimable)", cmap(j % 20)
        ax.bar(layers, sizes, bottom=bottom, label=name, color=color)
        bottom += sizes
    ax.set_xticks(layers, [f"layer {i}" for i in layers])
    ax.set_ylabel("fraction of weights")
    ax.set_title("Weight ownership by layer")
    ax.legend(fontsize=7, ncols=2)
    return _save(fig, path)
