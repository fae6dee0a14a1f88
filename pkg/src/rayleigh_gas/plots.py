"""Optional PNG figures next to the CSV outputs (matplotlib, headless)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _profile(hist, k):
    """Density along the first binned axis, other spatial axes and velocity summed out."""
    shape = hist.spec.shape(hist.d)
    mass = hist.mass[k].reshape(shape)
    prof = mass.reshape(shape[0], -1).sum(axis=1)
    err = np.sqrt((hist.stderr[k].reshape(shape[0], -1) ** 2).sum(axis=1))
    width = 1.0 / hist.spec.x_bins
    centers = (np.arange(hist.spec.x_bins) + 0.5) * width
    return centers, prof / width, err / width


def histogram_figure(path, named_hists: dict, title: str = "") -> Path:
    plt = _pyplot()
    some = next(iter(named_hists.values()))
    fig, axes = plt.subplots(1, len(some.times), figsize=(4.5 * len(some.times), 3.5), squeeze=False)
    for k, t in enumerate(some.times):
        ax = axes[0, k]
        for label, h in named_hists.items():
            x, y, e = _profile(h, k)
            ax.errorbar(x, y, yerr=e, marker="o", ms=3, capsize=2, label=label)
        ax.set_xlabel("x (first binned axis)")
        ax.set_ylabel("density")
        ax.set_title(f"t = {t:g}")
    axes[0, 0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def convergence_figure(path, rows) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for t_obs in sorted({r.t_obs for r in rows}):
        sel = [r for r in rows if r.t_obs == t_obs and r.status == "ok"]
        ax.errorbar([r.eps for r in sel], [r.distance_L1 for r in sel], yerr=[r.stderr_L1 for r in sel],
                    marker="o", capsize=3, label=f"L1, t = {t_obs:g}")
        ax.plot([r.eps for r in sel], [r.noise_L1 for r in sel], ls=":", color="gray")
    ax.set_xscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("binned distance")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def trace_figure(path, record) -> Path:
    plt = _pyplot()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(record.x[:, 0], record.x[:, 1], ".-", ms=3)
    a1.set_xlim(0, 1)
    a1.set_ylim(0, 1)
    a1.set_aspect("equal")
    a1.set_title("tagged position (torus)")
    a2.step(record.times, record.n_collisions, where="post")
    a2.set_xlabel("t")
    a2.set_ylabel("collisions")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
