"""Matplotlib renderings written alongside the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "save_loss_curve",
    "save_probe_summary",
    "save_probe_grid",
    "save_bench_scatter",
    "save_drag_report",
]

_IMSHOW = dict(cmap="gray", vmin=-1.0, vmax=1.0, interpolation="nearest")


def save_loss_curve(losses: list[float], path: str | Path, *, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(losses, lw=0.6, alpha=0.4, color="C0")
    if len(losses) > 20:
        k = max(len(losses) // 100, 5)
        smooth = np.convolve(losses, np.ones(k) / k, mode="valid")
        ax.plot(np.arange(len(smooth)) + k - 1, smooth, lw=1.5, color="C0")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_probe_summary(records: list[dict], path: str | Path) -> None:
    """Mean +/- std reconstruction MSE per (tap, start step)."""
    taps = sorted({r["tap"] for r in records})
    t0s = sorted({r["t0"] for r in records}, reverse=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(t0s), 1)
    xs = np.arange(len(taps))
    for j, t0 in enumerate(t0s):
        means, stds = [], []
        for tap in taps:
            vals = [r["mse"] for r in records if r["tap"] == tap and r["t0"] == t0]
            means.append(np.mean(vals))
            stds.append(np.std(vals))
        ax.bar(xs + j * width, means, width, yerr=stds, capsize=3, label=f"from step {t0}")
    base = [np.mean([r["baseline_mse"] for r in records if r["tap"] == taps[0]])]
    ax.axhline(base[0], color="k", ls="--", lw=1, label="baseline")
    ax.set_xticks(xs + width * (len(t0s) - 1) / 2)
    ax.set_xticklabels(taps, rotation=20, ha="right")
    ax.set_ylabel("reconstruction MSE")
    ax.set_title("feature replacement vs. reconstruction error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_probe_grid(original: np.ndarray, baseline: np.ndarray,
                    recons: dict[tuple[str, int], np.ndarray], path: str | Path) -> None:
    """One image's reconstruction under every (tap, start step) cell."""
    taps = sorted({tap for tap, _ in recons})
    t0s = sorted({t0 for _, t0 in recons}, reverse=True)
    rows, cols = len(t0s), len(taps) + 2
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.7 * rows), squeeze=False)
    for r, t0 in enumerate(t0s):
        axes[r][0].imshow(original, **_IMSHOW)
        axes[r][0].set_ylabel(f"from step {t0}", fontsize=8)
        axes[r][0].set_title("original" if r == 0 else "", fontsize=8)
        axes[r][1].imshow(baseline, **_IMSHOW)
        axes[r][1].set_title("baseline" if r == 0 else "", fontsize=8)
        for c, tap in enumerate(taps, start=2):
            axes[r][c].imshow(recons[(tap, t0)], **_IMSHOW)
            axes[r][c].set_title(tap if r == 0 else "", fontsize=8)
    for ax in axes.ravel():
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_scatter(records: list[dict], path: str | Path) -> None:
    """Mean distance vs. fidelity, propagation on and off."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for propagate, marker, label in ((True, "o", "propagated"),
                                     (False, "x", "single-step")):
        sel = [r for r in records if r["propagate"] == propagate]
        if sel:
            ax.scatter([r["md"] for r in sel], [r["fidelity"] for r in sel],
                       marker=marker, label=label, alpha=0.8)
    ax.set_xlabel("mean distance (px, lower is better)")
    ax.set_ylabel("fidelity MSE outside edit region")
    ax.set_title("drag benchmark")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_drag_report(before: np.ndarray, after: np.ndarray, pairs, trajectory,
                     loss_history, path: str | Path) -> None:
    """Before/after panel with points, anchor trajectory, and loss curve."""
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
    axes[0].imshow(before, **_IMSHOW)
    for (a, b) in pairs:
        axes[0].annotate("", xy=b, xytext=a,
                         arrowprops=dict(arrowstyle="->", color="red", lw=1.5))
        axes[0].plot(*a, "ro", ms=4)
        axes[0].plot(*b, "bo", ms=4)
    axes[0].set_title("input + drag")
    axes[1].imshow(after, **_IMSHOW)
    axes[1].set_title("edited")
    axes[2].imshow(before, **_IMSHOW)
    traj = np.asarray(trajectory)  # [steps+1, m, 2]
    for i in range(traj.shape[1]):
        axes[2].plot(traj[:, i, 0], traj[:, i, 1], "-", color="orange", lw=1)
        axes[2].plot(traj[0, i, 0], traj[0, i, 1], "ro", ms=3)
        axes[2].plot(traj[-1, i, 0], traj[-1, i, 1], "go", ms=3)
    axes[2].set_title("anchor trajectory")
    if loss_history:
        its = [h[0] for h in loss_history]
        axes[3].plot(its, [h[1] for h in loss_history], label="alignment")
        if any(h[2] for h in loss_history):
            axes[3].plot(its, [h[2] for h in loss_history], label="mask")
        axes[3].legend(fontsize=8)
    axes[3].set_title("optimization loss")
    axes[3].set_xlabel("iteration")
    for ax in axes[:3]:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
