"""Figure rendering for the CLI report paths.

Each plot mirrors one of the delimited outputs: the convergence trace, the
per-timepoint rMSE table, the CV grid scores, and the stability-selection
probability matrix. PNGs are written without the renderer's Software
metadata so reruns are byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_KWARGS = {"dpi": 150, "metadata": {"Software": None}}


def save_convergence_figure(trace, path) -> None:
    """Objective value and primal/dual residual norms against iteration."""
    records = trace.records
    iters = [r.iteration for r in records]
    fig, (ax_obj, ax_res) = plt.subplots(
        2, 1, figsize=(6.0, 5.0), sharex=True, height_ratios=[2, 1]
    )
    ax_obj.plot(iters, [r.objective for r in records], color="tab:red", lw=1.5)
    ax_obj.set_ylabel("objective")
    ax_obj.grid(alpha=0.3)

    ax_res.semilogy(iters, [max(r.r_primal, 1e-300) for r in records],
                    label="primal residual", lw=1.0)
    ax_res.semilogy(iters, [max(r.s_dual, 1e-300) for r in records],
                    label="dual residual", lw=1.0)
    ax_res.set_xlabel("iteration")
    ax_res.set_ylabel("residual norm")
    ax_res.legend(fontsize=8)
    ax_res.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)


def save_rmse_figure(report, path) -> None:
    """Per-timepoint rMSE with the pooled metrics in the title."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    x = np.arange(len(report.timepoint_labels))
    ax.plot(x, report.per_task_rmse, marker="^", color="tab:red", lw=1.5)
    ax.set_xticks(x)
    ax.set_xticklabels(report.timepoint_labels)
    ax.set_xlabel("timepoint")
    ax.set_ylabel("rMSE")
    ax.set_title(f"nMSE={report.nmse:.4f}  wR={report.wr:.4f}", fontsize=10)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)


def save_grid_figure(cv_result, path) -> None:
    """Mean validation score per grid cell with a std band, best cell marked."""
    cells = cv_result.cells
    x = np.arange(len(cells))
    mean = np.array([c.mean for c in cells])
    std = np.array([c.std for c in cells])
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    ax.plot(x, mean, lw=1.0, color="tab:blue")
    ax.fill_between(x, mean - std, mean + std, alpha=0.2, color="tab:blue")
    best_idx = next(i for i, c in enumerate(cells) if c.params == cv_result.best.params)
    ax.plot([best_idx], [cells[best_idx].mean], marker="*", ms=12, color="tab:red")
    ax.set_xlabel("grid cell (grid order)")
    ax.set_ylabel(cv_result.selection_metric)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)


def save_stability_heatmap(probabilities, feature_names, timepoint_labels, path) -> None:
    """Selection-probability heatmap, features by timepoints."""
    probs = np.asarray(probabilities)
    p = probs.shape[0]
    fig_height = max(3.0, min(12.0, 0.18 * p + 1.5))
    fig, ax = plt.subplots(figsize=(5.0, fig_height))
    im = ax.imshow(probs, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(np.arange(len(timepoint_labels)))
    ax.set_xticklabels(timepoint_labels, fontsize=8)
    if p <= 60:
        ax.set_yticks(np.arange(p))
        ax.set_yticklabels(feature_names, fontsize=6)
    ax.set_xlabel("timepoint")
    ax.set_ylabel("feature")
    fig.colorbar(im, ax=ax, label="selection probability")
    fig.tight_layout()
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)
