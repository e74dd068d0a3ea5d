"""Figure rendering for the report pipeline.

Renders the two figure styles the toolkit reports on: per-learner feature
importance bars and the completer vs non-completer median-time contrast.
File output only (Agg backend); the CSV/JSON emitted next to each figure
carries the same numbers for external plotting.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_RC = {
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.axisbelow": True,
    "font.size": 9,
    "legend.frameon": False,
}


def save_importance_figure(importances: dict, path, title: str = "Gini importance") -> None:
    """Grouped bars: one group per feature, one bar per learner.

    ``importances`` maps learner name -> {feature name -> importance}.
    """
    learners = list(importances)
    features = list(next(iter(importances.values())))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(features)), 3.6))
        x = np.arange(len(features))
        width = 0.8 / max(len(learners), 1)
        for i, learner in enumerate(learners):
            vals = [importances[learner].get(f, 0.0) for f in features]
            ax.bar(x + (i - (len(learners) - 1) / 2) * width, vals, width, label=learner)
        ax.set_xticks(x)
        ax.set_xticklabels(features, rotation=30, ha="right")
        ax.set_ylabel("importance")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def save_median_time_figure(median_completer: float, median_non_completer: float, path, title: str = "Median time on step 1.1") -> None:
    """Two bars: median first-step time for completers vs non-completers."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        bars = ax.bar(
            ["completers", "non-completers"],
            [median_completer, median_non_completer],
            color=["#2a6f97", "#9aa5b1"],
        )
        for bar, value in zip(bars, (median_completer, median_non_completer)):
            ax.annotate(
                f"{value:.0f}s",
                (bar.get_x() + bar.get_width() / 2, value),
                ha="center",
                va="bottom",
            )
        ax.set_ylabel("median seconds")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
