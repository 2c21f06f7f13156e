"""Figures written next to the delimited outputs. Uses the non-interactive Agg backend."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "dualloop",
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    # no timestamp in the file so reruns produce identical images
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_task_scores(metrics, path: str | Path) -> Path:
    """Horizontal bar per task (avg@k), with the suite average as a dashed line."""
    with plt.rc_context(_STYLE):
        tasks = metrics.per_task
        fig, ax = plt.subplots(figsize=(6, max(1.6, 0.35 * len(tasks) + 0.8)))
        ax.barh([t.id for t in tasks], [t.score for t in tasks], color="#4c72b0")
        ax.axvline(metrics.score, color="#c44e52", ls="--", lw=1, label=f"suite avg@{metrics.trials} = {metrics.score:.1f}")
        ax.set_xlim(0, 100)
        ax.set_xlabel(f"score (avg@{metrics.trials})")
        ax.invert_yaxis()
        ax.legend(loc="lower right", frameon=False)
        ax.set_title(metrics.name)
        return _save(fig, Path(path))


def write_scaling_table(multipliers: Sequence[int], values: Sequence[float], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp)
        w.writerow(["multiplier", "mean_completeness"])
        for m, v in zip(multipliers, values):
            w.writerow([m, f"{v:.6f}"])
    return path


def plot_budget_scaling(multipliers: Sequence[int], values: Sequence[float], path: str | Path, ylabel: str = "selected completeness") -> Path:
    """Selected-answer quality against compute multiplier, log2 x-axis."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(multipliers, values, marker="o", color="#4c72b0")
        ax.set_xscale("log", base=2)
        ax.set_xticks(list(multipliers))
        ax.set_xticklabels([f"{m}x" for m in multipliers])
        ax.set_xlabel("compute budget")
        ax.set_ylabel(ylabel)
        return _save(fig, Path(path))
