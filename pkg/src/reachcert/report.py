"""Report artifacts: JSON reports, seed-stamped CSV files, and figures.

Every CSV starts with a comment line carrying the generating seed, then a
header row.  The JSON report is written with sorted keys so identical runs
produce byte-identical files (timing lives under its own key and is the only
part allowed to differ).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .func_approx import FittedFunction, RbfClassConfig
from .oracle import Grid, GridValue, Policy


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_csv(path, header: Sequence[str], rows, seed: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def value_grid_rows(grid: Grid, values_per_step: dict, keep_mask: np.ndarray):
    """Rows (x1, x2, k, value) over the kept cells, for contour plotting."""
    centers = grid.centers
    kept = centers[keep_mask.ravel()]
    for k in sorted(values_per_step):
        vals = np.asarray(values_per_step[k]).ravel()[keep_mask.ravel()]
        for (x1, x2), v in zip(kept, vals):
            yield (f"{x1:.6f}", f"{x2:.6f}", k, f"{v:.6f}")


def policy_rows(grid: Grid, policy: Policy, keep_mask: np.ndarray):
    """Rows (x1, x2, k, action_index) over the kept cells."""
    centers = grid.centers
    kept = centers[keep_mask.ravel()]
    for k in range(policy.horizon):
        actions = policy.actions(k, kept)
        for (x1, x2), a in zip(kept, actions):
            yield (f"{x1:.6f}", f"{x2:.6f}", k, int(a))


def fitted_grid(functions: dict, box, resolution: int = 90):
    """Evaluate fitted step functions on a plotting grid over the safe box."""
    grid = Grid.regular(box, resolution)
    centers = grid.centers
    return grid, {k: f.batch(centers).reshape(grid.shape) for k, f in functions.items()}


def serialize_rbf(config: RbfClassConfig) -> dict:
    return {
        "centers": [list(map(float, c)) for c in config.centers],
        "width": float(config.width),
        "ridge": float(config.ridge),
    }


def serialize_value_stack(functions: Sequence[FittedFunction]) -> list:
    return [{"k": k + 1, "weights": [float(w) for w in f.weights]}
            for k, f in enumerate(functions)]


def load_value_stack(payload: dict):
    """Rebuild (RbfClassConfig, [FittedFunction...]) from a stored report."""
    rbf = payload["rbf"]
    config = RbfClassConfig(centers=np.asarray(rbf["centers"], dtype=float),
                            width=rbf["width"], ridge=rbf["ridge"])
    functions = [FittedFunction(config, np.asarray(entry["weights"], dtype=float))
                 for entry in sorted(payload["value_functions"], key=lambda e: e["k"])]
    return config, functions


# ---------------------------------------------------------------------------
# figures


def plot_value_functions(grid: Grid, values_per_step: dict, target_box, path) -> None:
    """Filled contours of the per-step value functions, target box outlined."""
    ks = sorted(values_per_step, reverse=True)
    fig, axes = plt.subplots(1, len(ks), figsize=(4.2 * len(ks), 3.6),
                             sharex=True, sharey=True)
    axes = np.atleast_1d(axes)
    ax1, ax2 = grid.axes
    for ax, k in zip(axes, ks):
        cs = ax.contourf(ax1, ax2, np.asarray(values_per_step[k]).T,
                         levels=np.linspace(0, 1, 21), cmap="viridis")
        _draw_box(ax, target_box)
        ax.set_title(f"step k={k}")
        ax.set_xlabel("x1")
    axes[0].set_ylabel("x2")
    fig.colorbar(cs, ax=axes, shrink=0.9, label="value")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_policy(grid: Grid, policy: Policy, target_box, path,
                steps: Optional[Sequence[int]] = None,
                action_labels: Optional[Sequence[str]] = None) -> None:
    """Per-step policy maps as color images over the grid."""
    if steps is None:
        steps = sorted({policy.horizon - 1, policy.horizon // 2, 0}, reverse=True)
    fig, axes = plt.subplots(1, len(steps), figsize=(4.2 * len(steps), 3.6),
                             sharex=True, sharey=True)
    axes = np.atleast_1d(axes)
    extent = (grid.lower[0], grid.upper[0], grid.lower[1], grid.upper[1])
    cmap = plt.get_cmap("tab10", policy.n_actions)
    for ax, k in zip(axes, steps):
        actions = policy.actions(k, grid.centers).reshape(grid.shape)
        im = ax.imshow(actions.T, origin="lower", extent=extent, cmap=cmap,
                       vmin=-0.5, vmax=policy.n_actions - 0.5, interpolation="nearest")
        _draw_box(ax, target_box)
        ax.set_title(f"policy at k={k}")
        ax.set_xlabel("x1")
    axes[0].set_ylabel("x2")
    cbar = fig.colorbar(im, ax=axes, shrink=0.9, ticks=range(policy.n_actions))
    if action_labels is not None:
        cbar.ax.set_yticklabels(action_labels)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_per_step_estimates(steps, single_step, bias, path) -> None:
    """Scatter of the per-step regression-error and bias estimates."""
    fig, ax = plt.subplots(figsize=(7, 2.8))
    ax.plot(steps, single_step, "x", color="tab:blue", label="single-step error")
    ax.plot(steps, bias, "o", mfc="none", color="tab:green", label="twin-batch bias")
    ax.set_xlabel("k")
    ax.set_ylabel("estimate")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_accuracy_growth(steps, accuracy, path) -> None:
    """Per-step propagated accuracy on a log scale (geometric growth check)."""
    fig, ax = plt.subplots(figsize=(7, 2.8))
    ax.semilogy(steps, accuracy, "x", color="tab:blue")
    ax.axhline(1.0, color="tab:red", lw=0.8, ls="--", label="vacuous above 1")
    ax.set_xlabel("k")
    ax.set_ylabel("accuracy")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3, which="both")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def _draw_box(ax, box) -> None:
    lo, hi = box.lower, box.upper
    ax.plot([lo[0], hi[0], hi[0], lo[0], lo[0]],
            [lo[1], lo[1], hi[1], hi[1], lo[1]], color="w", lw=1.2)
