"""Matplotlib renderers for the report outputs written next to CSV/JSONL files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(history: list[dict], path) -> None:
    """Loss and learning-rate trajectories from training metrics rows."""
    steps = [r["step"] for r in history]
    fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(7, 6), sharex=True,
                                    gridspec_kw={"height_ratios": [3, 1]})
    ax.plot(steps, [r["loss_total"] for r in history], label="total", lw=1.5)
    ax.plot(steps, [r["loss_dice"] for r in history], label="dice", lw=1.0, alpha=0.8)
    ax.plot(steps, [r["loss_ce"] for r in history], label="cross-entropy", lw=1.0, alpha=0.8)
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    ax_lr.plot(steps, [r["lr"] for r in history], color="tab:red", lw=1.0)
    ax_lr.set_xlabel("step")
    ax_lr.set_ylabel("lr")
    ax_lr.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_dice_summary(entries: list[dict], path) -> None:
    """Per-region Dice distribution across evaluated studies."""
    regions = ("WT", "TC", "ET")
    values = {r: [e["dice"][r] for e in entries] for r in regions}
    means = [float(np.mean(values[r])) for r in regions]
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(regions))
    ax.bar(xs, means, width=0.6, color=["tab:blue", "tab:orange", "tab:green"], alpha=0.8)
    for i, r in enumerate(regions):
        jitter = (np.arange(len(values[r])) - len(values[r]) / 2) * 0.01
        ax.scatter(np.full(len(values[r]), xs[i]) + jitter, values[r],
                   s=12, color="k", zorder=3, alpha=0.6)
    overall = float(np.mean([e["mean"] for e in entries]))
    ax.axhline(overall, ls="--", color="gray", lw=1, label=f"mean {overall:.3f}")
    ax.set_xticks(xs, regions)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("Dice")
    ax.legend(frameon=False)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_phase_disparity(rows: list[dict], path) -> None:
    """Checkerboard phase disparity per upsampler family, mean and spread."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(rows))
    ax.bar(xs, [r["mean"] for r in rows], yerr=[r["std"] for r in rows],
           width=0.6, capsize=4, color="tab:purple", alpha=0.8)
    ax.set_xticks(xs, [r["method"] for r in rows])
    ax.set_ylabel("phase disparity")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
