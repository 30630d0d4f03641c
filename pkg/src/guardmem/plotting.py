"""Figures written to files (headless backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_f1_curves(curves: Mapping[str, np.ndarray], path, title: str = "Held-out macro-F1") -> Path:
    """``curves`` maps method -> array (seeds, days + 1) of macro-F1, day 0 first."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, values in curves.items():
        values = np.atleast_2d(np.asarray(values, dtype=float))
        days = np.arange(values.shape[1])
        mean, std = values.mean(axis=0), values.std(axis=0)
        ax.plot(days, mean, marker="o", ms=3, label=method)
        if values.shape[0] > 1:
            ax.fill_between(days, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("day")
    ax.set_ylabel("macro-F1")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_gap_curves(rows: Sequence, path, delta: float) -> Path:
    """Lower bounds against sample size, one line pair per empirical accuracy."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for theta in sorted({r.theta_hat for r in rows}):
        sel = sorted((r for r in rows if r.theta_hat == theta), key=lambda r: r.n)
        n = [r.n for r in sel]
        line, = ax.plot(n, [r.beta_bound for r in sel], label=f"beta, acc={theta:g}")
        ax.plot(n, [r.hoeffding_bound for r in sel], ls="--", color=line.get_color(),
                label=f"hoeffding, acc={theta:g}")
    ax.set_xscale("log")
    ax.set_ylim(-0.5, 1.0)
    ax.set_xlabel("n = s + c")
    ax.set_ylabel("lower bound")
    ax.set_title(f"Lower confidence bounds, delta={delta:g}")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
