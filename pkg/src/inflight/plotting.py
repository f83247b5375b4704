"""Static SVG figures for the metric reports.

Rendering is deterministic: fixed hash salt, no timestamp in the metadata.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "inflight", "svg.fonttype": "none", "figure.dpi": 100}


def _save(fig, path, config_hash: str | None) -> None:
    meta = {"Date": None, "Creator": "inflight"}
    if config_hash:
        meta["Description"] = f"config_hash={config_hash}"
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)


def error_curves(curves: Mapping[str, tuple], path, config_hash: str | None = None) -> None:
    """``curves[name] = (remaining_frames, mean_error, std_error)``; x runs towards the goal."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, (rem, mean, std) in curves.items():
            ax.plot(rem, mean, label=name)
            ax.fill_between(rem, mean - std, mean + std, alpha=0.2)
        ax.invert_xaxis()
        ax.set_yscale("log")
        ax.set_xlabel("frames remaining to goal")
        ax.set_ylabel("position error at goal [m]")
        ax.legend()
        fig.tight_layout()
        _save(fig, path, config_hash)


def leading_time_bars(summary: Mapping[str, tuple[float, float]], path,
                      config_hash: str | None = None) -> None:
    """``summary[name] = (mean, std)`` in seconds."""
    names = list(summary)
    means = [summary[n][0] for n in names]
    stds = [summary[n][1] for n in names]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.bar(names, means, yerr=stds, capsize=4, color="0.6")
        ax.set_ylabel("leading time [s]")
        fig.tight_layout()
        _save(fig, path, config_hash)


def matrix_heatmap(M: np.ndarray, rows: Sequence[str], cols: Sequence[str], path,
                   config_hash: str | None = None) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.2 * len(cols) + 2, 1.0 * len(rows) + 1.5))
        im = ax.imshow(M, cmap="viridis")
        ax.set_xticks(range(len(cols)), cols)
        ax.set_yticks(range(len(rows)), rows)
        ax.set_xlabel("tested on")
        ax.set_ylabel("predictor")
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                ax.text(j, i, f"{M[i, j]:.3f}", ha="center", va="center", color="w")
        fig.colorbar(im, ax=ax, label="leading time [s]")
        fig.tight_layout()
        _save(fig, path, config_hash)


def loss_history(history: Sequence[Mapping[str, float]], path, config_hash: str | None = None) -> None:
    """One line per numeric column of the history (except ``epoch``)."""
    if not history:
        return
    keys = [k for k in history[0] if k != "epoch"]
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for k in keys:
            ax.plot(epochs, [h[k] for h in history], label=k, marker=".")
        if all(h[k] > 0 for h in history for k in keys):
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("probe loss")
        ax.legend()
        fig.tight_layout()
        _save(fig, path, config_hash)
