"""Figure rendering for the CLI report path. Figures land next to the CSV
artifacts; everything uses the non-interactive Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_metrics_figure(metrics_path, out_path):
    rows = np.genfromtxt(metrics_path, delimiter=",", names=True)
    if rows.size == 0:
        return None
    rows = np.atleast_1d(rows)
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    axes[0].plot(rows["step"], rows["mmd2"], lw=0.8)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("squared MMD")
    axes[0].set_title("discrepancy")
    axes[1].plot(rows["step"], rows["omega"], lw=0.8, color="tab:orange")
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("moment penalty")
    axes[1].set_title("regularizer")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def save_samples_figure(samples, out_path, target=None):
    samples = np.atleast_2d(np.asarray(samples))
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if samples.shape[1] == 1:
        x = samples[:, 0]
        ax.hist(x, bins=80, density=True, alpha=0.6, label="samples")
        if target is not None and hasattr(target, "pdf"):
            grid = np.linspace(x.min() - 1, x.max() + 1, 400)
            ax.plot(grid, target.pdf(grid), "k-", lw=1.2, label="target density")
        ax.set_xlabel("x")
        ax.set_ylabel("density")
        ax.legend(frameon=False)
    else:
        ax.scatter(samples[:, 0], samples[:, 1], s=3, alpha=0.3, label="samples")
        if target is not None and hasattr(target, "centers"):
            c = target.centers
            ax.scatter(c[:, 0], c[:, 1], marker="x", s=60, color="red",
                       label="mode centers")
        ax.set_aspect("equal")
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def save_audit_figure(report, out_path):
    entries = report["entries"]
    names = list(entries)
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    colors = ["tab:green" if entries[n]["pass"] else "tab:red" for n in names]
    axes[0].barh(names, [1] * len(names), color=colors)
    axes[0].set_xlim(0, 1)
    axes[0].set_xticks([])
    axes[0].set_title("audit results")
    psd = entries.get("psd")
    if psd:
        axes[1].bar(["min eigenvalue"], [psd["min_eig"]])
        axes[1].axhline(-psd["tolerance"], color="red", ls="--",
                        label=f"tolerance -{psd['tolerance']:.3g}")
        axes[1].legend(frameon=False)
        axes[1].set_title(f"Gram spectrum floor ({psd['variant']})")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
