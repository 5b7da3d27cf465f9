"""Figures and tables from a results directory.

Every plot function returns a matplotlib Figure; ``build_report`` saves
them as PNG with fixed metadata so regenerating gives identical bytes.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import (AGGREGATE_ID, REFERENCE, TABLE_ORDER, aggregate, format_table,  # noqa: E402
                         per_sample)
from .stats import bland_altman  # noqa: E402

_SAVE = dict(dpi=100, metadata={"Software": None})


def _methods(runs):
    return [m for m in TABLE_ORDER if any(k[0] == m for k in runs)]


def dice_boxplot(runs: dict) -> plt.Figure:
    """Per-sample Dice (seed-mean) for each method, one box per fraction."""
    fig, ax = plt.subplots(figsize=(8, 4))
    keys = [k for m in _methods(runs) for k in sorted(runs, key=lambda k: -k[1]) if k[0] == m]
    data, labels = [], []
    for k in keys:
        vals = list(per_sample(runs, k, "DS").values())
        if vals:
            data.append(vals)
            labels.append(f"{k[0]}\n{k[1]:g}")
    if data:
        ax.boxplot(data)
        ax.set_xticks(range(1, len(labels) + 1), labels, fontsize=7)
    ax.set_ylabel("Dice")
    ax.set_title("Test Dice by method and labeled fraction")
    fig.tight_layout()
    return fig


def accuracy_plot(header, table) -> plt.Figure:
    """Seed-mean test accuracy against labeled fraction."""
    fig, ax = plt.subplots(figsize=(5, 4))
    col = header.index("accuracy")
    series = defaultdict(list)
    for row in table:
        if row[col] is not None:
            series[row[0]].append((row[1], row[col]))
    for m in TABLE_ORDER:
        if m in series:
            pts = sorted(series[m])
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=m)
    ax.set_xlabel("labeled fraction")
    ax.set_ylabel("accuracy")
    ax.set_title("Classification accuracy")
    if series:
        ax.legend()
    fig.tight_layout()
    return fig


def bland_altman_plot(runs: dict, key=REFERENCE) -> plt.Figure:
    """Predicted against true foreground pixel counts for one configuration."""
    fig, ax = plt.subplots(figsize=(5, 4))
    if key in runs:
        t = per_sample(runs, key, "truth_pixels")
        p = per_sample(runs, key, "pred_pixels")
        ids = [i for i in t if i in p]
        if len(ids) >= 2:
            rep = bland_altman([t[i] for i in ids], [p[i] for i in ids])
            ax.scatter(rep.table["mean"], rep.table["diff"], s=8)
            for y, style in ((rep.mean_diff, "-"), (rep.loa_low, "--"), (rep.loa_high, "--")):
                ax.axhline(y, color="k", linestyle=style, linewidth=1)
    ax.set_xlabel("mean of true and predicted pixels")
    ax.set_ylabel("predicted - true pixels")
    ax.set_title(f"Bland-Altman, {key[0]} at {key[1]:g}")
    fig.tight_layout()
    return fig


def classwise_boxplot(runs: dict, key=REFERENCE) -> plt.Figure:
    """Dice per true class for one configuration."""
    fig, ax = plt.subplots(figsize=(5, 4))
    if key in runs:
        ds = per_sample(runs, key, "DS")
        rows = next(iter(runs[key].values()))
        cls = {r["id"]: int(r["true_class"]) for r in rows if r["id"] != AGGREGATE_ID}
        groups = defaultdict(list)
        for i, v in ds.items():
            groups[cls[i]].append(v)
        order = sorted(groups)
        if order:
            ax.boxplot([groups[c] for c in order])
            ax.set_xticks(range(1, len(order) + 1), [f"class {c}" for c in order])
    ax.set_ylabel("Dice")
    ax.set_title(f"Dice by class, {key[0]} at {key[1]:g}")
    fig.tight_layout()
    return fig


def build_report(results_dir, out_dir=None) -> dict:
    """Aggregate, then write figures and ``report.txt``. Returns paths and missing runs."""
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise FileNotFoundError(f"no results directory {results_dir}")
    out_dir = Path(out_dir) if out_dir else results_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = aggregate(results_dir)
    runs = agg["runs"]
    figures = {
        "dice_box.png": dice_boxplot(runs),
        "accuracy.png": accuracy_plot(agg["header"], agg["table"]),
        "bland_altman.png": bland_altman_plot(runs),
        "classwise_dice.png": classwise_boxplot(runs),
    }
    paths = []
    for name, fig in figures.items():
        fig.savefig(out_dir / name, **_SAVE)
        plt.close(fig)
        paths.append(out_dir / name)
    lines = [format_table(agg["header"], agg["table"])]
    if agg["stats"]:
        lines.append("\nS4MTL at 0.5 against other configurations (per-sample Dice):\n")
        for r in agg["stats"]:
            p = "-" if r["p_value"] is None else f"{r['p_value']:.4g}"
            lines.append(f"  {r['comparison']:<40} {r['test']:<14} stat={r['statistic']:.4g} p={p}"
                         + (" (degenerate)" if r["degenerate"] else "") + "\n")
    if agg["missing"]:
        lines.append("\nincomplete runs: " + ", ".join(agg["missing"]) + "\n")
    (out_dir / "report.txt").write_text("".join(lines))
    paths.append(out_dir / "report.txt")
    return {"paths": paths, "missing": agg["missing"]}
