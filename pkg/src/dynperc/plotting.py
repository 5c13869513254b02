"""Figures for the report paths (written to files, never shown)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_scaling(ns, means, stderrs, fit=None, title="", path="scaling.png"):
    """Means against n on log-log axes with the fitted power law."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(ns, means, yerr=1.96 * np.asarray(stderrs), fmt="o", capsize=3, label="mean")
    if fit is not None:
        grid = np.linspace(min(ns), max(ns), 50)
        ax.plot(grid, np.exp(fit.intercept) * grid ** fit.slope, "--",
                label=f"slope {fit.slope:.2f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("time")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_band(band, title="", path="band.png"):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(band.ns, band.normalized, "o-")
    ax.set_xlabel("n")
    ax.set_ylabel(f"mean / ({band.normalizer})")
    ax.set_title(f"{title} band ratio {band.ratio:.2f}")
    ax.set_ylim(bottom=0)
    return _save(fig, path)


def plot_survival(tail, title="", path="survival.png"):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(tail.m, tail.survival, "o", ms=3)
    ax.set_xlabel("m")
    ax.set_ylabel("P(|R| >= m)")
    ax.set_title(f"{title} slope {tail.slope:.3f}")
    return _save(fig, path)


def plot_histogram(counts, title="", path="histogram.png"):
    counts = np.asarray(counts, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(np.arange(counts.size), counts / counts.sum(), width=1.0)
    ax.axhline(1.0 / counts.size, color="k", lw=0.8, ls="--")
    ax.set_xlabel("vertex")
    ax.set_ylabel("probability")
    ax.set_title(title)
    return _save(fig, path)


def plot_tv(times, tv, title="", path="tv.png"):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(times, np.maximum(tv, 1e-16), "o-")
    ax.set_xlabel("t")
    ax.set_ylabel("TV to stationarity")
    ax.set_title(title)
    return _save(fig, path)
