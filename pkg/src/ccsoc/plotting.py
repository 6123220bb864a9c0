"""Static figures written next to the CSV outputs (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bounds import SampleBound  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_bound_curves(sample_sizes, lambdas, path) -> Path:
    """f(lambda) per sample size with its 1/(N_s+1) floor and convexity threshold."""
    lambdas = np.asarray(lambdas, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for ns in sample_sizes:
            b = SampleBound(int(ns))
            line, = ax.plot(lambdas, b.f(lambdas), label=f"$N_s$ = {ns}")
            ax.axhline(b.floor, color=line.get_color(), ls=":", lw=0.8)
            th = b.theta()
            ax.plot([th], [b.f(th)], "o", color=line.get_color(), ms=4)
        ax.plot(lambdas, 1.0 / (lambdas**2 + 1.0), "k--", lw=0.8, label="Cantelli")
        ax.set_yscale("log")
        ax.set_xlabel(r"$\lambda$")
        ax.set_ylabel(r"$f(\lambda)$")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_trajectories(trajectories: dict, path, targets=None) -> Path:
    """Mean positions in the radial / along-track plane, one line per vehicle."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for vid, X in trajectories.items():
            X = np.asarray(X)
            ax.plot(X[:, 1], X[:, 0], "-o", ms=3, label=f"vehicle {vid}")
        for c in targets or []:
            ax.plot(c[1], c[0], "kx")
        ax.plot(0, 0, "k*", ms=8)
        ax.set_xlabel("along-track y [m]")
        ax.set_ylabel("radial x [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_ledger(records, path) -> Path:
    """Objective and slack total per convex-concave iteration."""
    it = [r.iteration for r in records]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True)
        a1.plot(it, [r.objective for r in records], "-o", ms=3)
        a1.set_ylabel("J(U)")
        a2.semilogy(it, np.maximum([r.slack_sum for r in records], 1e-300), "-o", ms=3)
        a2.set_ylabel("slack total")
        a2.set_xlabel("iteration")
        return _save(fig, path)


def plot_tail_reports(reports, path) -> Path:
    """Empirical exceedance against the bound, one panel per sample size."""
    sizes = sorted({r.n_samples for r in reports})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(sizes), figsize=(4.0 * len(sizes), 3.5), squeeze=False)
        for ax, ns in zip(axes[0], sizes):
            bound_drawn = False
            for r in (r for r in reports if r.n_samples == ns):
                if not bound_drawn:
                    ax.plot(r.lambdas, r.bound, "k-", lw=1.2, label="bound")
                    bound_drawn = True
                ax.plot(r.lambdas, np.maximum(r.exceed, 1e-6), "o--", ms=3, label=r.distribution)
            ax.set_yscale("log")
            ax.set_title(f"$N_s$ = {ns}")
            ax.set_xlabel(r"$\lambda$")
        axes[0][0].set_ylabel("exceedance probability")
        axes[0][-1].legend(frameon=False, fontsize=8)
        return _save(fig, path)
