"""End-to-end experiment: simulate, train four models, score TEST, diagnose, report.

Population P is always the high-use population and Q the low-use one.
Every random draw comes from a stream named after its stage, so results do
not depend on the number of worker threads.
"""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import (
    HIGH,
    LOW,
    FeatureKind,
    RngHandle,
    ScoredSet,
    SplitTag,
    cohort_to_csv,
    partition_by,
    scored_to_csv,
)
from .metrics import auc, generalization_matrix
from .models import TrainConfig, model_id, model_to_text, score_cohort, train
from .report import (
    RunReport,
    covariate_doc,
    curve_doc,
    emit_json,
    score_histograms,
    summarize_cohort,
    summary_doc,
    table1_csv,
    text_summary,
)
from .simulate import GroundTruth, SimConfig, generate
from .stability import (
    StabilitySummary,
    bootstrap_interval,
    covariate_stability,
    predictive_stability_curve,
    predictive_stability_summary,
)

log = logging.getLogger(__name__)

DEFAULT_REPLICATES = 1000
DEFAULT_LEVEL = 0.95


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    replicates: int = DEFAULT_REPLICATES
    level: float = DEFAULT_LEVEL
    threads: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class RunResult:
    config: SimConfig
    cohorts: dict
    truth: GroundTruth
    models: dict
    scored: dict
    report: RunReport


def train_config_for(settings: RunSettings, mid: str) -> TrainConfig:
    return replace(settings.train, rng=RngHandle(settings.seed, f"train/{mid}"))


def _auc_statistic(P: ScoredSet, Q: ScoredSet) -> float:
    return auc(P.scores, P.labels)


def _summary_statistic(P: ScoredSet, Q: ScoredSet) -> float:
    return predictive_stability_summary(predictive_stability_curve(P, Q)).value


def diagnose_model(scored_P: ScoredSet, scored_Q: ScoredSet, settings: RunSettings):
    """Both stability diagnostics for one model.

    Returns ``(covariate_results, curve, summary)``; the summary carries a
    percentile-bootstrap interval when ``settings.replicates`` is positive.
    """
    cs = [covariate_stability(scored_P, scored_Q, label) for label in (0, 1)]
    curve = predictive_stability_curve(scored_P, scored_Q)
    summary = predictive_stability_summary(curve)
    if settings.replicates:
        rng = RngHandle(settings.seed, f"bootstrap/ps/{scored_P.model_id}")
        interval = bootstrap_interval(
            _summary_statistic, scored_P, scored_Q, settings.replicates, settings.level, rng, settings.threads
        )
        summary = StabilitySummary(summary.model_id, summary.value, interval.covering(summary.value))
    return cs, curve, summary


def diagnosis_document(scored_P: ScoredSet, scored_Q: ScoredSet, settings: RunSettings) -> dict:
    """Standalone JSON fragment with the same layout as the run report's stability sections."""
    cs, curve, summary = diagnose_model(scored_P, scored_Q, settings)
    return {
        "model_id": scored_P.model_id,
        "covariate_stability": [covariate_doc(c) for c in cs],
        "predictive_stability": {"curves": [curve_doc(curve)], "summaries": [summary_doc(summary)]},
    }


def _matrix_with_intervals(kind: FeatureKind, scored: dict, settings: RunSettings):
    intervals = None
    point = generalization_matrix(scored, kind)
    if settings.replicates:
        intervals = {}
        for (tp, qp), value in point.cells.items():
            cell = partition_by(scored[tp], qp)
            rng = RngHandle(settings.seed, f"bootstrap/auc/{model_id(kind, tp)}/{qp.value}")
            interval = bootstrap_interval(
                _auc_statistic, cell, ScoredSet.empty(cell.model_id), settings.replicates, settings.level, rng,
                settings.threads,
            )
            intervals[(tp, qp)] = interval.covering(value)
    return generalization_matrix(scored, kind, intervals)


def run_pipeline(config: SimConfig, settings: RunSettings) -> RunResult:
    config = replace(config, seed=RngHandle(settings.seed, "simulate"))
    log.info("simulating cohorts (seed %d)", settings.seed)
    ehr, ekg, truth = generate(config)
    cohorts = {FeatureKind.EHR_LIKE: ehr, FeatureKind.EKG_LIKE: ekg}
    jobs = [(kind, pop) for kind in FeatureKind for pop in (LOW, HIGH)]

    def fit(job):
        kind, pop = job
        return train(cohorts[kind], pop, train_config_for(settings, model_id(kind, pop)))

    log.info("training %d models", len(jobs))
    if settings.threads > 1:
        with ThreadPoolExecutor(max_workers=min(settings.threads, len(jobs))) as pool:
            fitted = list(pool.map(fit, jobs))
    else:
        fitted = [fit(job) for job in jobs]
    models = dict(zip(jobs, fitted))
    scored = {job: score_cohort(models[job], cohorts[job[0]], SplitTag.TEST) for job in jobs}

    log.info("computing diagnostics")
    matrices, cs_all, curves, summaries, hists = [], [], [], [], []
    for kind in FeatureKind:
        matrices.append(_matrix_with_intervals(kind, {pop: scored[(kind, pop)] for pop in (LOW, HIGH)}, settings))
    for job in jobs:
        s = scored[job]
        cs, curve, summary = diagnose_model(partition_by(s, HIGH), partition_by(s, LOW), settings)
        cs_all.extend(cs)
        curves.append(curve)
        summaries.append(summary)
        hists.extend(score_histograms(s))

    digest = config.digest()
    run_id = hashlib.sha256(f"{digest}:{settings.seed}:{settings.replicates}:{settings.level}".encode()).hexdigest()[:12]
    report = RunReport(
        run_id=run_id,
        config_digest=digest,
        cohort_summary=summarize_cohort(ehr),
        matrices=tuple(matrices),
        covariate_stability=tuple(cs_all),
        curves=tuple(curves),
        summaries=tuple(summaries),
        histograms=tuple(hists),
    )
    return RunResult(config, cohorts, truth, models, scored, report)


def atomic_write(path: Path, text: str) -> Path:
    """Write ``text`` next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def scored_paths(out_dir: Path, mid: str) -> tuple:
    return out_dir / "scores" / f"{mid}.P.csv", out_dir / "scores" / f"{mid}.Q.csv"


def write_run(result: RunResult, out_dir) -> list[Path]:
    """Write the documented ``run-all`` layout under ``out_dir``.

    ::

        report.json  summary.txt  table1.csv  config.txt
        cohorts/{ehr,ekg}_cohort.csv  cohorts/truth.csv
        models/{model_id}.txt
        scores/{model_id}.P.csv  scores/{model_id}.Q.csv
        figures/*.svg
    """
    from .plotting import emit_plots

    out_dir = Path(out_dir)
    written = [
        atomic_write(out_dir / "config.txt", result.config.to_text()),
        atomic_write(out_dir / "report.json", emit_json(result.report)),
        atomic_write(out_dir / "summary.txt", text_summary(result.report)),
        atomic_write(out_dir / "table1.csv", table1_csv(result.report.cohort_summary)),
    ]
    for kind, cohort in result.cohorts.items():
        written.append(atomic_write(out_dir / "cohorts" / f"{kind.value}_cohort.csv", cohort_to_csv(cohort)))
    written.append(atomic_write(out_dir / "cohorts" / "truth.csv", result.truth.to_csv()))
    for (kind, pop), model in result.models.items():
        written.append(atomic_write(out_dir / "models" / f"{model.model_id}.txt", model_to_text(model)))
        s = result.scored[(kind, pop)]
        p_path, q_path = scored_paths(out_dir, model.model_id)
        written.append(atomic_write(p_path, scored_to_csv(partition_by(s, HIGH))))
        written.append(atomic_write(q_path, scored_to_csv(partition_by(s, LOW))))
    written.extend(emit_plots(result.report, out_dir / "figures"))
    return written
