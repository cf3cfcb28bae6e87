"""PNG figures written next to the CSV artifacts.

Matplotlib runs on the Agg backend so no display is needed; figures carry
no timestamps, so reruns produce identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "image.cmap": "viridis",
}
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=_PNG_META, bbox_inches="tight")
    plt.close(fig)
    return path


def field_figure(x1, x2, values, path, title=None, labels=("x1", "x2")):
    """Filled contour of a function sampled on the tensor grid ``x1 x x2``.

    ``values`` has shape ``(len(x1), len(x2))``.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 2.9))
        cs = ax.contourf(x1, x2, np.asarray(values).T, levels=20)
        fig.colorbar(cs, ax=ax)
        ax.set_xlabel(labels[0])
        ax.set_ylabel(labels[1])
        if title:
            ax.set_title(title)
        return _save(fig, path)


def trace_figure(loglik, path, title="log-likelihood trace"):
    ll = np.asarray(loglik, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.4))
        ax.plot(np.arange(1, ll.size + 1), ll, color="#2b8cbe")
        ax.set_xlabel("iteration")
        ax.set_ylabel("log-likelihood")
        ax.set_title(title)
        return _save(fig, path)


def width_sweep_figure(rows, path):
    """Acceptance rate against width, one line per prior."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 2.6))
        for fam in sorted({r["prior"] for r in rows}):
            sel = sorted((r for r in rows if r["prior"] == fam), key=lambda r: r["width"])
            ax.plot([r["width"] for r in sel], [r["acceptance_pct"] for r in sel], marker="o", label=fam)
        ax.set_xlabel("width")
        ax.set_ylabel("acceptance (%)")
        ax.set_ylim(bottom=0)
        ax.legend()
        return _save(fig, path)


def test_point_figure(vectors, path, labels=None):
    """Boxplots of normalized value vectors, one panel per test point.

    ``vectors`` has shape ``(n_points, n_samples, n_actions)``.
    """
    V = np.asarray(vectors, dtype=float)
    n_points, _, M = V.shape
    labels = labels or [str(k + 1) for k in range(M)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n_points, figsize=(1.6 * n_points, 2.4), sharey=True, squeeze=False)
        for j, ax in enumerate(axes[0]):
            ax.boxplot([V[j, :, k] for k in range(M)], showfliers=False)
            ax.set_xticks(range(1, M + 1), labels)
            ax.set_title(f"z{j + 1}")
        axes[0, 0].set_ylabel("value difference")
        return _save(fig, path)


test_point_figure.__test__ = False


def steps_figure(steps_by_policy: dict, max_steps: int, path):
    """Histogram of steps to the goal per policy."""
    bins = np.linspace(0, max_steps, 21)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        for name, steps in steps_by_policy.items():
            ax.hist(np.asarray(steps), bins=bins, histtype="step", label=name)
        ax.set_xlabel("steps until success")
        ax.set_ylabel("episodes")
        ax.legend()
        return _save(fig, path)
