"""Delimited output and figures for runs and retry-budget sweeps."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SWEEP_FIELDS = ("retries", "accuracy", "mean_latency", "mean_cost")

STYLE = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.linewidth": 0.8,
    "legend.fontsize": 9,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "figure.dpi": 110,
}
COLORS = ("#0C5DA5", "#00A08A", "#F98400")


def _finalize(ax) -> None:
    for spine in ("top", "right"):
        ax.spines[spine].set_visible(False)
    ax.grid(alpha=0.25, linewidth=0.5, linestyle="--")


def write_sweep_csv(rows: Iterable[dict[str, Any]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in SWEEP_FIELDS})


def read_sweep_csv(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [
            {"retries": int(r["retries"]), **{k: float(r[k]) for k in SWEEP_FIELDS[1:]}}
            for r in csv.DictReader(fh)
        ]


def plot_sweep(rows: list[dict[str, Any]], path: str | Path) -> Path:
    """Accuracy, latency and cost against the retry budget, one panel each."""
    retries = [r["retries"] for r in rows]
    panels = (
        ("accuracy", "Accuracy (%)", 100.0),
        ("mean_latency", "Avg. latency (s)", 1.0),
        ("mean_cost", "Avg. cost ($)", 1.0),
    )
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3))
        for ax, (key, label, scale), color in zip(axes, panels, COLORS):
            ax.plot(retries, [r[key] * scale for r in rows], marker="o", color=color, linewidth=1.5)
            ax.set_xlabel("Max retry times")
            ax.set_ylabel(label)
            ax.set_xticks(retries)
            _finalize(ax)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, dpi=200, bbox_inches="tight")
        plt.close(fig)
    return path


def plot_attempts(results: list[dict[str, Any]], path: str | Path) -> Path:
    """Histogram of attempts used per task, split by outcome."""
    counts: dict[str, dict[int, int]] = {"success": {}, "budget_exhausted": {}}
    for res in results:
        n = len(res["attempts"])
        bucket = counts.setdefault(res["outcome"], {})
        bucket[n] = bucket.get(n, 0) + 1
    top = max([n for b in counts.values() for n in b] or [1])
    xs = list(range(1, top + 1))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        bottom = [0] * len(xs)
        for (outcome, bucket), color in zip(counts.items(), COLORS):
            heights = [bucket.get(x, 0) for x in xs]
            ax.bar(xs, heights, bottom=bottom, color=color, label=outcome.replace("_", " "))
            bottom = [b + h for b, h in zip(bottom, heights)]
        ax.set_xlabel("Attempts used")
        ax.set_ylabel("Tasks")
        ax.set_xticks(xs)
        ax.legend(frameon=False)
        _finalize(ax)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, dpi=200, bbox_inches="tight")
        plt.close(fig)
    return path
