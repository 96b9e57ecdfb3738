"""SVG figures for a run report.

Files are named ``{figure}_{feature_kind}_{trainpop}.svg``; figures that
compare both training populations use ``all`` for the last part. Output is
byte-stable: the SVG id salt is fixed and no timestamp is written.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import numpy as np
from matplotlib.figure import Figure

from .core import FeatureKind, PopulationTag
from .report import HISTOGRAM_BINS, RunReport

COLORS = {PopulationTag.LOW_USE: "#1f77b4", PopulationTag.HIGH_USE: "#ff7f0e"}
NAMES = {PopulationTag.LOW_USE: "low-use (Q)", PopulationTag.HIGH_USE: "high-use (P)"}
_RC = {
    "svg.hashsalt": "portastat",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
_WIDTH = 0.36


def _save(fig: Figure, path: Path) -> Path:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _model_id(kind: FeatureKind, pop: PopulationTag) -> str:
    return f"{kind.value}-{pop.value}"


def _whiskers(values, intervals):
    bounds = [tuple(iv) if iv is not None else (v, v) for v, iv in zip(values, intervals)]
    return np.array([[v - lo for v, (lo, _) in zip(values, bounds)], [hi - v for v, (_, hi) in zip(values, bounds)]])


def plot_auc(report: RunReport, kind: FeatureKind) -> Figure:
    matrix = report.matrix(kind)
    fig = Figure(figsize=(4.0, 3.0))
    ax = fig.add_subplot()
    x = np.arange(2)
    for offset, tp in zip((-_WIDTH / 2, _WIDTH / 2), PopulationTag):
        vals = [matrix.cells[(tp, qp)] for qp in PopulationTag]
        ivs = [matrix.interval(tp, qp) for qp in PopulationTag]
        ax.bar(x + offset, vals, _WIDTH, color=COLORS[tp], label=f"trained on {NAMES[tp]}")
        if any(iv is not None for iv in ivs):
            ax.errorbar(x + offset, vals, yerr=_whiskers(vals, ivs), fmt="none", ecolor="black", capsize=3, lw=1)
    ax.set_xticks(x, [f"test: {NAMES[qp]}" for qp in PopulationTag])
    ax.set_ylabel("AUC")
    ax.set_ylim(0.5, 1.0)
    ax.set_title(f"{kind.value}-based models")
    ax.legend(loc="upper left", frameon=False, fontsize=7)
    fig.tight_layout()
    return fig


def plot_ks(report: RunReport, kind: FeatureKind) -> Figure:
    fig = Figure(figsize=(4.0, 3.0))
    ax = fig.add_subplot()
    x = np.arange(2)
    for offset, tp in zip((-_WIDTH / 2, _WIDTH / 2), PopulationTag):
        mid = _model_id(kind, tp)
        stats = {c.label: c.ks.statistic for c in report.covariate_stability if c.model_id == mid}
        vals = [stats.get(label, np.nan) for label in (0, 1)]
        ax.bar(x + offset, vals, _WIDTH, color=COLORS[tp], label=f"trained on {NAMES[tp]}")
    ax.set_xticks(x, ["y = 0", "y = 1"])
    ax.set_ylabel("KS distance, P vs Q (lower is more stable)")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(f"covariate stability, {kind.value}")
    ax.legend(loc="upper left", frameon=False, fontsize=7)
    fig.tight_layout()
    return fig


def plot_ps_summary(report: RunReport, kind: FeatureKind) -> Figure:
    fig = Figure(figsize=(3.2, 3.0))
    ax = fig.add_subplot()
    pops = list(PopulationTag)
    by_id = {s.model_id: s for s in report.summaries}
    vals, ivs = [], []
    for tp in pops:
        s = by_id.get(_model_id(kind, tp))
        vals.append(s.value if s else np.nan)
        ivs.append(s.bootstrap_interval if s else None)
    x = np.arange(len(pops))
    ax.bar(x, vals, 0.6, color=[COLORS[tp] for tp in pops])
    if any(iv is not None for iv in ivs):
        ax.errorbar(x, vals, yerr=_whiskers(vals, ivs), fmt="none", ecolor="black", capsize=3, lw=1)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(x, [f"trained on\n{NAMES[tp]}" for tp in pops])
    ax.set_ylabel(r"$E_Q[y|\hat y] - E_P[y|\hat y]$")
    ax.set_title(f"predictive stability, {kind.value}")
    fig.tight_layout()
    return fig


def plot_score_histograms(report: RunReport, kind: FeatureKind, train_pop: PopulationTag) -> Figure:
    mid = _model_id(kind, train_pop)
    edges = np.linspace(0.0, 1.0, HISTOGRAM_BINS + 1)
    fig = Figure(figsize=(6.0, 2.8))
    axes = fig.subplots(1, 2, sharey=False)
    for ax, label in zip(axes, (0, 1)):
        for pop in PopulationTag:
            h = next(
                (h for h in report.histograms if h.model_id == mid and h.label == label and h.population is pop),
                None,
            )
            if h is None:
                continue
            counts = np.asarray(h.counts, dtype=float)
            total = counts.sum()
            density = counts / (total * np.diff(edges)) if total else counts
            ax.stairs(density, edges, fill=True, alpha=0.45, color=COLORS[pop], label=f"{NAMES[pop]} (n={int(total)})")
        ax.set_title(f"y = {label}")
        ax.set_xlabel(r"$\hat y$")
        ax.legend(frameon=False, fontsize=7)
    axes[0].set_ylabel("density")
    fig.suptitle(f"{kind.value}, trained on {NAMES[train_pop]}")
    fig.tight_layout()
    return fig


def plot_curve(report: RunReport, kind: FeatureKind, train_pop: PopulationTag) -> Figure:
    mid = _model_id(kind, train_pop)
    curve = next(c for c in report.curves if c.model_id == mid)
    fig = Figure(figsize=(4.0, 3.0))
    ax = fig.add_subplot()
    x = np.arange(1, len(curve.bins) + 1)
    diffs = np.array([b.diff if b.diff is not None else np.nan for b in curve.bins])
    # binomial standard errors of the two bin means, 95% normal whiskers
    se = []
    for b in curve.bins:
        if b.diff is None:
            se.append(np.nan)
        else:
            var = b.mean_y_P * (1 - b.mean_y_P) / b.n_P + b.mean_y_Q * (1 - b.mean_y_Q) / b.n_Q
            se.append(1.96 * np.sqrt(var))
    ax.errorbar(x, diffs, yerr=np.array(se), fmt="o-", color=COLORS[train_pop], capsize=3, lw=1)
    ax.axhline(0.0, color="black", lw=0.8)
    labels = [f"{curve.bin_edges[i]:.2f}-{curve.bin_edges[i + 1]:.2f}" for i in range(len(curve.bins))]
    ax.set_xticks(x, labels, rotation=30, fontsize=7)
    ax.set_xlabel(r"$\hat y$ quintile (equal P/Q mixture)")
    ax.set_ylabel(r"$E_Q[y|\hat y] - E_P[y|\hat y]$")
    ax.set_title(f"{kind.value}, trained on {NAMES[train_pop]}")
    fig.tight_layout()
    return fig


def emit_plots(report: RunReport, out_dir) -> list[Path]:
    """Write every figure the report has data for; returns the file paths in emission order."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create plot directory {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"plot directory {out_dir} is not writable")
    paths = []
    with matplotlib.rc_context(_RC):
        kinds = [m.feature_kind for m in report.matrices]
        for kind in kinds:
            paths.append(_save(plot_auc(report, kind), out_dir / f"auc_{kind.value}_all.svg"))
        for kind in kinds:
            if any(c.model_id.startswith(kind.value + "-") for c in report.covariate_stability):
                paths.append(_save(plot_ks(report, kind), out_dir / f"ks_{kind.value}_all.svg"))
        for kind in kinds:
            if any(s.model_id.startswith(kind.value + "-") for s in report.summaries):
                paths.append(_save(plot_ps_summary(report, kind), out_dir / f"ps_{kind.value}_all.svg"))
        for kind in kinds:
            for tp in PopulationTag:
                if any(h.model_id == _model_id(kind, tp) for h in report.histograms):
                    fig = plot_score_histograms(report, kind, tp)
                    paths.append(_save(fig, out_dir / f"scores_{kind.value}_{tp.value}.svg"))
        for kind in kinds:
            for tp in PopulationTag:
                if any(c.model_id == _model_id(kind, tp) for c in report.curves):
                    fig = plot_curve(report, kind, tp)
                    paths.append(_save(fig, out_dir / f"curve_{kind.value}_{tp.value}.svg"))
    return paths
