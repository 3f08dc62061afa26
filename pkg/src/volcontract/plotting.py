"""Figures rendered to files for the command-line reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .stability import order_star_mask  # noqa: E402


def plot_trajectory(record, path, title=None):
    """Cumulative log-det against the divergence reference, plus the path."""
    fig, (ax_det, ax_path) = plt.subplots(1, 2, figsize=(10, 4))
    t = record.times[1:]
    ax_det.plot(t, record.cum_logdet, label="cumulative log|det A|")
    ref = record.div_integral
    if np.all(np.isfinite(ref)):
        ax_det.plot(t, np.cumsum(ref), "--", label="integral of tr F")
    ax_det.set_xlabel("t")
    ax_det.legend(loc="best")
    states = record.states
    if states.shape[1] >= 2:
        ax_path.plot(states[:, 0], states[:, 1], lw=0.8)
        ax_path.set_xlabel("x1")
        ax_path.set_ylabel("x2")
    else:
        ax_path.plot(record.times, states[:, 0], lw=0.8)
        ax_path.set_xlabel("t")
        ax_path.set_ylabel("x1")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_compliance(report, path):
    """``h*`` per trace level on log axes; level 0 is drawn at the left edge."""
    fig, ax = plt.subplots(figsize=(6, 4))
    levels = np.array(report.trace_levels, dtype=float)
    hs = np.array([report.h_star[float(l)] for l in levels])
    mags = np.abs(levels)
    floor = mags[mags > 0].min() / 10.0 if np.any(mags > 0) else 1e-12
    mags = np.where(mags > 0, mags, floor)
    hs_plot = np.where(hs > 0, hs, np.nan)
    ax.loglog(mags, hs_plot, "o-")
    ax.set_xlabel("|tr F| level")
    ax.set_ylabel("largest violation-free h")
    ax.set_title(f"{report.method} on {report.field_family}, L={report.L:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_order_star(tableau, path, extent=4.0, resolution=301):
    """Region where ``|R(z)| < |e^z|`` over a square of the complex plane."""
    xs = np.linspace(-extent, extent, resolution)
    grid = xs[None, :] + 1j * xs[:, None]
    mask = order_star_mask(tableau, grid)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(mask.astype(float), origin="lower", extent=(-extent, extent, -extent, extent),
              cmap="Greys", vmin=0.0, vmax=1.5)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.axvline(0.0, color="k", lw=0.5)
    ax.set_xlabel("Re z")
    ax.set_ylabel("Im z")
    ax.set_title(f"order star of {tableau.name}")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
