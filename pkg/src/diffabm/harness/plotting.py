"""PNG figures rendered from the same arrays that go into the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}
SOURCE_COLORS = {"prior": "tab:green", "untrained": "tab:orange", "trained": "tab:blue"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curve(log, path, title: str = "", log_scale: bool = False) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        epochs = log.column("epoch")
        ax.plot(epochs, log.column("objective"), lw=0.6, ls="--", alpha=0.5, label="objective")
        ax.plot(epochs, log.column("objective_ma10"), lw=1.4, label="10-epoch average")
        if log_scale:
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("objective")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def corner(samples, names, path, truth=None, bins: int = 40) -> Path:
    samples = np.asarray(samples)
    d = samples.shape[1]
    with plt.rc_context(STYLE | {"axes.grid": False}):
        fig, axes = plt.subplots(d, d, figsize=(1.8 * d, 1.8 * d))
        for i in range(d):
            for j in range(d):
                ax = axes[i, j]
                if j > i:
                    ax.axis("off")
                elif i == j:
                    ax.hist(samples[:, i], bins=bins, color="tab:blue", alpha=0.8)
                    if truth is not None:
                        ax.axvline(truth[i], color="k", lw=1)
                else:
                    ax.hist2d(samples[:, j], samples[:, i], bins=bins, cmap="Blues")
                    if truth is not None:
                        ax.plot(truth[j], truth[i], "k+", ms=8)
                if i == d - 1:
                    ax.set_xlabel(names[j])
                if j == 0 and i > 0:
                    ax.set_ylabel(names[i])
        fig.tight_layout()
        return _save(fig, path)


def marginals(samples, names, path, bins: int = 40) -> Path:
    samples = np.asarray(samples)
    d = samples.shape[1]
    cols = 4
    rows = -(-d // cols)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(2.4 * cols, 1.9 * rows))
        for k, ax in enumerate(np.ravel(axes)):
            if k >= d:
                ax.axis("off")
                continue
            ax.hist(samples[:, k], bins=bins, color="tab:blue", alpha=0.8)
            ax.set_title(names[k], fontsize=8)
        fig.tight_layout()
        return _save(fig, path)


def gradient_boxplots(estimates: dict, components, reference: dict, path) -> Path:
    labels = list(estimates)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 4, figsize=(12, 5.5))
        for j, ax in enumerate(np.ravel(axes)):
            ax.boxplot([estimates[k][:, j] for k in labels], showfliers=False)
            ax.set_xticks(range(1, len(labels) + 1), labels, rotation=45, fontsize=7)
            ax.axhline(reference["score"].mean[j], color="tab:blue", marker="x", lw=0.8)
            ax.set_title(components[j], fontsize=8)
            ax.set_yscale("symlog", linthresh=1e-3)
        fig.tight_layout()
        return _save(fig, path)


def std_histograms(estimates: dict, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        stds = {k: v.std(axis=0, ddof=1) for k, v in estimates.items()}
        lo = max(min(s[s > 0].min() for s in stds.values() if np.any(s > 0)), 1e-12)
        hi = max(s.max() for s in stds.values())
        bins = np.logspace(np.log10(lo), np.log10(hi) + 1e-9, 25)
        for k, s in stds.items():
            ax.hist(s, bins=bins, histtype="step", lw=1.3, label=k)
        ax.set_xscale("log")
        ax.set_xlabel("std of gradient estimate")
        ax.set_ylabel("components")
        ax.legend()
        return _save(fig, path)


def trajectory_fan(truth, fans: dict, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.4))
        days = np.arange(len(truth))
        for name, fan in fans.items():
            c = SOURCE_COLORS.get(name, None)
            for k, traj in enumerate(fan):
                ax.plot(days, traj, color=c, lw=0.5, alpha=0.35, label=name if k == 0 else None)
        ax.plot(days, truth, color="k", lw=1.8, label="ground truth")
        ax.set_yscale("symlog", linthresh=10)
        ax.set_xlabel("day")
        ax.set_ylabel("cumulative infections")
        ax.legend()
        return _save(fig, path)


def memory_profile(records, fit, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for mode, marker in (("reverse", "o"), ("forward", "s")):
            pts = [(r.n_agents * r.steps, r.node_count) for r in records if r.mode == mode and r.status == "ok"]
            if pts:
                x, y = zip(*pts)
                ax.plot(x, y, marker, label=f"{mode} mode")
        if fit[1] is not None:
            x = np.linspace(0, max(r.n_agents * r.steps for r in records), 50)
            ax.plot(x, fit[0] + fit[1] * x, "k--", lw=0.8, label=f"affine fit, R² = {fit[2]:.4f}")
        ax.set_xlabel("agents × time steps")
        ax.set_ylabel("tape nodes")
        ax.legend()
        return _save(fig, path)
