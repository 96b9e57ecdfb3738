"""Run reports: per-population cohort summaries and a lossless JSON document.

Undefined quantities (the positive fraction of an empty cell, bin means with
no entries, absent bootstrap intervals) are ``None`` in Python and omitted
from the JSON document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    Cohort,
    FeatureKind,
    PopulationTag,
    ScoredSet,
    SplitTag,
    ValidationError,
    partition_by,
)
from .metrics import GeneralizationMatrix, KSResult
from .stability import (
    BootstrapInterval,
    CovariateStabilityResult,
    StabilityBin,
    StabilityCurve,
    StabilitySummary,
)

HISTOGRAM_BINS = 20
REPORT_KEYS = (
    "run_id",
    "config_digest",
    "cohort_summary",
    "generalization",
    "covariate_stability",
    "predictive_stability",
)


@dataclass(frozen=True)
class CohortSummaryRow:
    population: PopulationTag
    split: SplitTag
    frac_pos: Optional[float]
    n_pos: int
    n_obs: int


@dataclass(frozen=True)
class ScoreHistogram:
    """Counts of one model's scores for one (population, label) cell over equal-width bins on [0, 1]."""

    model_id: str
    label: int
    population: PopulationTag
    counts: tuple


@dataclass(frozen=True)
class RunReport:
    run_id: str
    config_digest: str
    cohort_summary: tuple
    matrices: tuple
    covariate_stability: tuple
    curves: tuple
    summaries: tuple
    histograms: tuple = ()

    def matrix(self, kind: FeatureKind) -> Optional[GeneralizationMatrix]:
        return next((m for m in self.matrices if m.feature_kind is kind), None)

    def validate(self) -> list[str]:
        problems = []
        for row in self.cohort_summary:
            expected = row.n_pos / row.n_obs if row.n_obs else None
            if row.frac_pos != expected:
                problems.append(f"cohort row {row.population.value}/{row.split.value}: frac_pos != n_pos/n_obs")
        lineage = {f"{m.feature_kind.value}-{tp.value}" for m in self.matrices for tp in PopulationTag}
        referenced = (
            [c.model_id for c in self.covariate_stability]
            + [c.model_id for c in self.curves]
            + [s.model_id for s in self.summaries]
            + [h.model_id for h in self.histograms]
        )
        for mid in sorted(set(referenced)):
            if mid not in lineage:
                problems.append(f"model {mid!r} has no generalization-matrix row")
        return problems


def summarize_cohort(cohort: Cohort) -> tuple:
    """One row per (population, split) with exact positive counts and fraction."""
    arr = cohort.arrays() if len(cohort) else None
    rows = []
    for pop in PopulationTag:
        for split in SplitTag:
            if arr is None:
                n_obs = n_pos = 0
            else:
                keep = arr.mask(pop, split)
                n_obs = int(keep.sum())
                n_pos = int(arr.labels[keep].sum())
            rows.append(CohortSummaryRow(pop, split, n_pos / n_obs if n_obs else None, n_pos, n_obs))
    return tuple(rows)


def score_histograms(scored: ScoredSet) -> list[ScoreHistogram]:
    """Per (label, population) score counts for the histogram figures; counts sum to the cell sizes."""
    out = []
    for label in (0, 1):
        for pop in PopulationTag:
            part = partition_by(scored, pop, label)
            counts, _ = np.histogram(part.scores, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
            out.append(ScoreHistogram(scored.model_id, label, pop, tuple(int(c) for c in counts)))
    return out


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _interval_doc(interval) -> dict:
    if isinstance(interval, BootstrapInterval):
        return {
            "lo": interval.lo,
            "hi": interval.hi,
            "level": interval.level,
            "replicates": interval.replicates,
            "failed": interval.failed,
        }
    lo, hi = interval
    return {"lo": float(lo), "hi": float(hi)}


def _interval_from(doc: dict):
    if "level" in doc:
        return BootstrapInterval(doc["lo"], doc["hi"], doc["level"], doc["replicates"], doc.get("failed", 0))
    return (doc["lo"], doc["hi"])


def _put(doc: dict, key: str, value):
    if value is not None:
        doc[key] = value


def matrix_doc(matrix: GeneralizationMatrix) -> dict:
    cells = []
    for tp in PopulationTag:
        for qp in PopulationTag:
            cell = {"train": tp.value, "test": qp.value, "auc": matrix.cells[(tp, qp)]}
            interval = matrix.interval(tp, qp)
            if interval is not None:
                cell["interval"] = _interval_doc(interval)
            cells.append(cell)
    return {"feature_kind": matrix.feature_kind.value, "cells": cells}


def covariate_doc(result: CovariateStabilityResult, histograms=()) -> dict:
    doc = {
        "model_id": result.model_id,
        "label": result.label,
        "statistic": result.ks.statistic,
        "p_value": result.ks.p_value,
        "n_a": result.ks.n_a,
        "n_b": result.ks.n_b,
    }
    mine = [h for h in histograms if h.model_id == result.model_id and h.label == result.label]
    if mine:
        doc["histograms"] = {"bins": HISTOGRAM_BINS, **{h.population.value: list(h.counts) for h in mine}}
    return doc


def curve_doc(curve: StabilityCurve) -> dict:
    bins = []
    for b in curve.bins:
        entry = {"n_P": b.n_P, "n_Q": b.n_Q}
        _put(entry, "mean_y_P", b.mean_y_P)
        _put(entry, "mean_y_Q", b.mean_y_Q)
        _put(entry, "diff", b.diff)
        bins.append(entry)
    return {"model_id": curve.model_id, "bin_edges": list(curve.bin_edges), "bins": bins}


def summary_doc(summary: StabilitySummary) -> dict:
    doc = {"model_id": summary.model_id, "value": summary.value}
    if summary.bootstrap_interval is not None:
        doc["interval"] = _interval_doc(summary.bootstrap_interval)
    return doc


def report_to_dict(report: RunReport) -> dict:
    rows = []
    for r in report.cohort_summary:
        row = {"population": r.population.value, "split": r.split.value}
        _put(row, "frac_pos", r.frac_pos)
        row.update(n_pos=r.n_pos, n_obs=r.n_obs)
        rows.append(row)
    return {
        "run_id": report.run_id,
        "config_digest": report.config_digest,
        "cohort_summary": rows,
        "generalization": [matrix_doc(m) for m in report.matrices],
        "covariate_stability": [covariate_doc(c, report.histograms) for c in report.covariate_stability],
        "predictive_stability": {
            "curves": [curve_doc(c) for c in report.curves],
            "summaries": [summary_doc(s) for s in report.summaries],
        },
    }


def emit_json(report: RunReport) -> str:
    """Serialize ``report``; keys appear in a fixed order and floats round-trip exactly."""
    return json.dumps(report_to_dict(report), indent=2, allow_nan=False) + "\n"


def _matrix_from(doc: dict) -> GeneralizationMatrix:
    cells, intervals = {}, {}
    for c in doc["cells"]:
        key = (PopulationTag.parse(c["train"]), PopulationTag.parse(c["test"]))
        cells[key] = c["auc"]
        if "interval" in c:
            intervals[key] = _interval_from(c["interval"])
    return GeneralizationMatrix(FeatureKind.parse(doc["feature_kind"]), cells, intervals or None)


def curve_from_dict(doc: dict) -> StabilityCurve:
    bins = tuple(
        StabilityBin(b.get("mean_y_P"), b.get("mean_y_Q"), b.get("diff"), b["n_P"], b["n_Q"]) for b in doc["bins"]
    )
    return StabilityCurve(doc["model_id"], tuple(doc["bin_edges"]), bins)


def summary_from_dict(doc: dict) -> StabilitySummary:
    interval = _interval_from(doc["interval"]) if "interval" in doc else None
    return StabilitySummary(doc["model_id"], doc["value"], interval)


def covariate_from_dict(doc: dict) -> CovariateStabilityResult:
    ks = KSResult(doc["statistic"], doc["p_value"], doc["n_a"], doc["n_b"])
    return CovariateStabilityResult(doc["model_id"], doc["label"], ks)


def report_from_dict(doc: dict) -> RunReport:
    missing = [k for k in REPORT_KEYS if k not in doc]
    if missing:
        raise ValidationError(f"report is missing keys {missing}")
    try:
        rows = tuple(
            CohortSummaryRow(
                PopulationTag.parse(r["population"]),
                SplitTag.parse(r["split"]),
                r.get("frac_pos"),
                r["n_pos"],
                r["n_obs"],
            )
            for r in doc["cohort_summary"]
        )
        histograms = []
        for c in doc["covariate_stability"]:
            for pop in PopulationTag:
                counts = c.get("histograms", {}).get(pop.value)
                if counts is not None:
                    histograms.append(ScoreHistogram(c["model_id"], c["label"], pop, tuple(counts)))
        ps = doc["predictive_stability"]
        return RunReport(
            run_id=doc["run_id"],
            config_digest=doc["config_digest"],
            cohort_summary=rows,
            matrices=tuple(_matrix_from(m) for m in doc["generalization"]),
            covariate_stability=tuple(covariate_from_dict(c) for c in doc["covariate_stability"]),
            curves=tuple(curve_from_dict(c) for c in ps["curves"]),
            summaries=tuple(summary_from_dict(s) for s in ps["summaries"]),
            histograms=tuple(histograms),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed report document: {exc!r}") from None


def parse_json(text: str) -> RunReport:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"report is not valid JSON: {exc}") from None
    return report_from_dict(doc)


# ---------------------------------------------------------------------------
# text tables
# ---------------------------------------------------------------------------


def _fmt_interval(interval) -> str:
    if interval is None:
        return ""
    lo, hi = interval
    return f" [{lo:.3f}, {hi:.3f}]"


def table1_csv(rows) -> str:
    lines = ["population,split,frac_pos,n_pos,n_obs"]
    for r in rows:
        frac = "" if r.frac_pos is None else f"{r.frac_pos:.3f}"
        lines.append(f"{r.population.value},{r.split.value},{frac},{r.n_pos},{r.n_obs}")
    return "\n".join(lines) + "\n"


def text_summary(report: RunReport) -> str:
    """One-screen table of AUCs, covariate-stability KS and predictive-stability summaries."""
    out = [f"run {report.run_id}  config {report.config_digest}", ""]
    out.append("Cohort (frac_pos, n_pos, n_obs)")
    for r in report.cohort_summary:
        frac = "  n/a" if r.frac_pos is None else f"{r.frac_pos:.3f}"
        out.append(f"  {r.population.value:<5}{r.split.value:<6}{frac}  {r.n_pos:>5}  {r.n_obs:>5}")
    out.append("")
    out.append("Generalization AUC (rows: train population, columns: test population)")
    for m in report.matrices:
        for tp in PopulationTag:
            cells = "   ".join(
                f"test={qp.value:<4} {m.cells[(tp, qp)]:.3f}{_fmt_interval(m.interval(tp, qp))}" for qp in PopulationTag
            )
            out.append(f"  {m.feature_kind.value} train={tp.value:<4}  {cells}")
    out.append("")
    out.append("Covariate stability KS (statistic, p-value)")
    for c in report.covariate_stability:
        out.append(f"  {c.model_id:<9} y={c.label}  {c.ks.statistic:.3f}  p={c.ks.p_value:.3g}")
    out.append("")
    out.append("Predictive stability E_Q[y|s] - E_P[y|s] (equal-mixture mean)")
    for s in report.summaries:
        out.append(f"  {s.model_id:<9} {s.value:+.3f}{_fmt_interval(s.bootstrap_interval)}")
    return "\n".join(out) + "\n"
