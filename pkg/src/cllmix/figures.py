"""Rendered figures accompanying the CSV exports of the report path."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 150


def save_item_recovery_figure(cells, metric: str, path) -> None:
    """Per-item recovery for one (design, N) group: two panels (d on top,
    delta below), one line per focal proportion. ``metric`` is 'bias' or
    'rmse'; ``cells`` holds (SimDesign, AggregateReport) pairs."""
    if metric not in ("bias", "rmse"):
        raise ValueError(f"metric must be 'bias' or 'rmse', got {metric!r}")
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for design, report in cells:
        d_vals = getattr(report, f"d_{metric}")
        delta_vals = getattr(report, f"delta_{metric}")
        items = np.arange(1, d_vals.size + 1)
        label = f"pi={design.pi_focal:g}"
        axes[0].plot(items, d_vals, marker="o", ms=3, label=label)
        axes[1].plot(items, delta_vals, marker="o", ms=3, label=label)
    for ax, name in zip(axes, ("difficulty", "DIF shift")):
        ax.axhline(0.0, color="grey", lw=0.6)
        ax.set_ylabel(f"{name} {metric}")
        ax.legend(fontsize=8)
    axes[1].set_xlabel("item")
    design0 = cells[0][0]
    fig.suptitle(f"Design {design0.design}, N={design0.n}: per-item {metric}")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def save_roc_figure(cells, path) -> None:
    """Pooled ROC staircases of the given cells plus the chance diagonal."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    for design, report in cells:
        pts = report.roc_points
        ax.step(pts[:, 0], pts[:, 1], where="post",
                label=f"{design.design} N={design.n} pi={design.pi_focal:g} "
                      f"(AUC={report.auc:.3f})")
    ax.plot([0, 1], [0, 1], ls="--", color="grey", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def save_bic_path_figure(path_result, path) -> None:
    """BIC against the penalty grid with the selected point marked."""
    lams = [rec.lam for rec in path_result.records if rec.bic is not None]
    bics = [rec.bic for rec in path_result.records if rec.bic is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(lams, bics, marker="o", ms=3)
    if path_result.selected_index is not None:
        sel = path_result.records[path_result.selected_index]
        ax.plot([sel.lam], [sel.bic], marker="*", ms=14, color="crimson")
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("BIC")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def render_study_figures(cells, out_dir) -> list:
    """Render the standard study figure set into ``out_dir`` and return
    the created paths. Cells are grouped by (design, N) for the item
    panels and by design for the ROC overlays."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []
    by_group = {}
    for design, report in cells:
        by_group.setdefault((design.design, design.n), []).append((design, report))
    for (dname, n), group in sorted(by_group.items()):
        for metric in ("bias", "rmse"):
            target = out_dir / f"items_{metric}_{dname}_N{n}.png"
            save_item_recovery_figure(group, metric, target)
            created.append(target)
    by_design = {}
    for design, report in cells:
        by_design.setdefault(design.design, []).append((design, report))
    for dname, group in sorted(by_design.items()):
        target = out_dir / f"roc_{dname}.png"
        save_roc_figure(group, target)
        created.append(target)
    return created
