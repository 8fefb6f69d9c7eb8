"""Accuracy-versus-round figures written next to the metrics CSVs."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .federation import RoundRecord  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 10,
    "savefig.dpi": 150,
}


def _finish(fig, ax, path: Path, title: str | None) -> Path:
    ax.set_xlabel("communication round")
    ax.set_ylabel("test accuracy")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_curves(curves: Mapping[str, Sequence[RoundRecord]], path: str | Path, title: str | None = None) -> Path:
    """One global-accuracy line per labelled run."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, recs in curves.items():
            ls = ":" if "zero" in label else "-"
            marker = "o" if "zero" in label else None
            ax.plot([r.round for r in recs], [r.global_acc for r in recs], ls=ls, marker=marker, ms=3, label=label)
        return _finish(fig, ax, Path(path), title)


def plot_band(runs: Sequence[Sequence[RoundRecord]], path: str | Path, label: str = "mean",
              title: str | None = None) -> Path:
    """Mean global accuracy over seeds with a min/max envelope."""
    n = min(len(r) for r in runs)
    rounds = list(range(n))
    per_round = [[run[t].global_acc for run in runs] for t in rounds]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.fill_between(rounds, [min(v) for v in per_round], [max(v) for v in per_round], alpha=0.25,
                        label=f"min/max over {len(runs)} seeds")
        ax.plot(rounds, [sum(v) / len(v) for v in per_round], label=label)
        return _finish(fig, ax, Path(path), title)


def plot_before_after(records: Sequence[RoundRecord], client_id: int, path: str | Path,
                      title: str | None = None) -> Path:
    """Accuracy of one client right before and right after each aggregation."""
    xs, before, after = [], [], []
    for rec in records:
        for p in rec.participants:
            if p.client_id == client_id:
                xs.append(rec.round)
                before.append(p.acc_before)
                after.append(p.acc_after)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(xs, before, marker="^", label=f"client {client_id} before aggregation")
        ax.plot(xs, after, marker="v", label=f"client {client_id} after aggregation")
        return _finish(fig, ax, Path(path), title)
