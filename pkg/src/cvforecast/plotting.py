"""SVG figures for experiment reports (matplotlib, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

plt.rcParams.update({"svg.fonttype": "none", "svg.hashsalt": "cvforecast"})

_META = {"Date": None}
_UNITS = {"speed_mps": "m/s", "headway_m": "m"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def significance_gid(row) -> str:
    """Element id of one significance-grid cell, encoding its report row and verdict."""
    verdict = "na" if row.significant is None else str(int(row.significant))
    return f"sig|{row.quantity}|{row.penetration_pct:g}|{row.filter}|{row.predictor}|{row.replicate}|{verdict}"


def plot_metric_vs_penetration(rows, metric: str, path) -> Path:
    """One panel per quantity; one line per filter/predictor pair (replicates averaged)."""
    quantities = sorted({r.quantity for r in rows})
    fig, axes = plt.subplots(1, len(quantities), figsize=(5.5 * len(quantities), 4), squeeze=False)
    for ax, q in zip(axes[0], quantities):
        combos = sorted({(r.filter, r.predictor) for r in rows if r.quantity == q})
        for filt, pred in combos:
            by_pen: Dict[float, List[float]] = {}
            for r in rows:
                if (r.quantity, r.filter, r.predictor) == (q, filt, pred) and r.ok:
                    by_pen.setdefault(r.penetration_pct, []).append(getattr(r, metric))
            if not by_pen:
                continue
            pens = sorted(by_pen)
            ax.plot(pens, [np.mean(by_pen[p]) for p in pens], marker="o", label=f"{pred}+{filt}")
        ax.set_title(q)
        ax.set_xlabel("penetration (%)")
        ax.set_ylabel(metric)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_significance_grid(rows, path) -> Path:
    """Coloured grid of t-test verdicts: one cell per report row.

    Columns are penetrations; lines are filter/predictor/replicate triples,
    stacked per quantity. Each cell carries a :func:`significance_gid`.
    """
    rows = list(rows)
    pens = sorted({r.penetration_pct for r in rows})
    lines = sorted({(r.quantity, r.filter, r.predictor, r.replicate) for r in rows})
    fig, ax = plt.subplots(figsize=(4.0 + 0.6 * len(pens), 1.5 + 0.3 * len(lines)))
    colour = {True: "#d62728", False: "#2ca02c", None: "#bbbbbb"}
    for r in rows:
        x = pens.index(r.penetration_pct)
        y = lines.index((r.quantity, r.filter, r.predictor, r.replicate))
        rect = Rectangle((x, y), 1, 1, facecolor=colour[r.significant], edgecolor="white")
        rect.set_gid(significance_gid(r))
        ax.add_patch(rect)
    ax.set_xlim(0, len(pens))
    ax.set_ylim(0, len(lines))
    ax.invert_yaxis()
    ax.set_xticks(np.arange(len(pens)) + 0.5)
    ax.set_xticklabels([f"{p:g}" for p in pens])
    ax.set_yticks(np.arange(len(lines)) + 0.5)
    ax.set_yticklabels([f"{q} {f}/{p} r{k}" for q, f, p, k in lines], fontsize=7)
    ax.set_xlabel("penetration (%)")
    ax.set_title("paired t-test vs ground truth (red: significant at 95%)", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_overlay(truth, predictions: Mapping[str, np.ndarray], path, quantity: str = "", frame_rate_hz: float = 10.0) -> Path:
    """Predicted against ground-truth test series."""
    t = np.arange(len(truth)) / frame_rate_hz
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.plot(t, truth, color="black", lw=1.2, label="ground truth (100%)")
    for label, p in predictions.items():
        ax.plot(t, p, lw=0.8, label=label)
    ax.set_xlabel("time in test window (s)")
    ax.set_ylabel(f"{quantity} ({_UNITS.get(quantity, '')})")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_noise(report, path, title: str = "") -> Path:
    """Noise histogram with its normal Q-Q plot."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.stairs(report.counts, report.bin_edges, fill=True, alpha=0.7)
    a.set_xlabel("sampled - full")
    a.set_ylabel("frames")
    qq = report.qq_points
    b.plot(qq[:, 0], qq[:, 1], ".", ms=2)
    lim = float(np.max(np.abs(qq[:, 0])))
    b.plot([-lim, lim], [-lim, lim], color="grey", lw=0.8)
    b.set_xlabel("normal quantile")
    b.set_ylabel("standardised noise quantile")
    b.set_title(f"Q-Q r = {report.qq_pearson_r:.4f}", fontsize=9)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(stats, path, parameter: str = "candidate") -> Path:
    """Box-and-whisker summary of a hyperparameter sweep (whiskers at min/max)."""
    cands = sorted(stats)
    boxes = [
        {"label": f"{c:g}", "med": stats[c].median, "q1": stats[c].q1, "q3": stats[c].q3,
         "whislo": stats[c].min, "whishi": stats[c].max, "fliers": []}
        for c in cands
    ]
    fig, ax = plt.subplots(figsize=(1.5 + 0.8 * len(cands), 3.5))
    ax.bxp(boxes, showfliers=False)
    ax.set_xlabel(parameter)
    ax.set_ylabel("validation RMSE (normalised)")
    fig.tight_layout()
    return _save(fig, path)


def render_report(report, out_dir) -> List[Path]:
    """All report figures that the available content supports."""
    out = Path(out_dir)
    rows = report.rows
    written = [
        plot_metric_vs_penetration(rows, "mape_pct", out / "mape_vs_penetration.svg"),
        plot_metric_vs_penetration(rows, "rmse", out / "rmse_vs_penetration.svg"),
        plot_significance_grid(rows, out / "significance_grid.svg"),
    ]
    # Overlay at the lowest penetration present, one line per filter/predictor.
    for key, truth in sorted(report.traces.items()):
        if not key.startswith("truth|"):
            continue
        q = key.split("|", 1)[1]
        cells = [k.split("|") for k in report.traces if k.startswith(f"pred|{q}|")]
        if not cells:
            continue
        low = min((c[2] for c in cells), key=float)
        preds = {f"{c[4]}+{c[3]} @ {low}%": report.traces["|".join(c)] for c in sorted(cells) if c[2] == low}
        written.append(plot_overlay(truth, preds, out / f"overlay_{q}.svg", q))
    for key, nr in sorted(report.noise.items()):
        q, pen = key.split("|")
        written.append(plot_noise(nr, out / f"noise_{q}_{pen}.svg", f"{q} at {pen}% penetration"))
    return written
