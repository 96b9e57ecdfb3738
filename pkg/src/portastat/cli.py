"""Command-line entry point: ``portastat <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data, validation or I/O error,
3 numerical failure (non-finite loss, prevalence calibration).
"""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from .core import (
    CalibrationFailure,
    FeatureKind,
    NonFiniteLoss,
    PopulationTag,
    PortabilityError,
    SplitTag,
    cohort_from_csv,
    cohort_to_csv,
    partition_by,
    scored_from_csv,
    scored_to_csv,
)
from .models import model_from_text, model_to_text, score_cohort, train
from .pipeline import (
    DEFAULT_LEVEL,
    DEFAULT_REPLICATES,
    RunSettings,
    atomic_write,
    diagnosis_document,
    run_pipeline,
    train_config_for,
    write_run,
)
from .report import parse_json, text_summary
from .simulate import SimConfig, generate, load_config

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

log = logging.getLogger("portastat")


class StageError(Exception):
    """A failure inside one pipeline stage, carrying the exit code to use."""

    def __init__(self, stage: str, exc: BaseException):
        self.stage = stage
        self.exc = exc
        self.code = EXIT_NUMERIC if isinstance(exc, (NonFiniteLoss, CalibrationFailure)) else EXIT_DATA
        super().__init__(f"{stage}: {exc}")


class _stage:
    """Context manager that tags library and I/O errors with the stage name."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.debug("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (PortabilityError, OSError, ValueError)):
            raise StageError(self.name, exc) from exc
        return False


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _default_threads() -> int:
    return os.cpu_count() or 1


def _settings(seed: int, replicates: int, level: float, threads: int) -> RunSettings:
    return RunSettings(seed=seed, replicates=replicates, level=level, threads=max(1, threads))


seed_option = click.option(
    "--seed", type=click.IntRange(0, 2**64 - 1), envvar="PORTASTAT_SEED", default=0, show_default=True,
    help="Base seed; falls back to $PORTASTAT_SEED.",
)
bootstrap_options = [
    click.option("--replicates", type=click.IntRange(min=0), default=DEFAULT_REPLICATES, show_default=True,
                 help="Bootstrap replicates (0 disables intervals)."),
    click.option("--level", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True),
                 default=DEFAULT_LEVEL, show_default=True, help="Two-sided interval level."),
    click.option("--threads", type=click.IntRange(min=1), default=_default_threads,
                 help="Worker threads [default: all cores]."),
]


def with_bootstrap(fn):
    for opt in reversed(bootstrap_options):
        fn = opt(fn)
    return fn


def _check_replicates(replicates: int):
    if 0 < replicates < 100:
        raise click.BadParameter("need 0 or at least 100", param_hint="--replicates")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Portability diagnostics for classifiers moved between two populations."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(name)s: %(message)s")


@cli.command()
@click.option("--config", "config_path", default=None, help="Simulator settings file (key = value lines).")
@click.option("--out", "out_dir", required=True, help="Output directory.")
@seed_option
def simulate(config_path, out_dir, seed):
    """Generate the EHR-like and EKG-like cohorts plus ground truth."""
    with _stage("config"):
        config = load_config(config_path) if config_path else SimConfig()
    config = replace(config, seed=replace(config.seed, seed=seed))
    with _stage("simulate"):
        ehr, ekg, truth = generate(config)
    out = Path(out_dir)
    with _stage("write"):
        atomic_write(out / "config.txt", config.to_text())
        atomic_write(out / "ehr_cohort.csv", cohort_to_csv(ehr))
        atomic_write(out / "ekg_cohort.csv", cohort_to_csv(ekg))
        atomic_write(out / "truth.csv", truth.to_csv())
    click.echo(f"wrote {len(ehr)} records per cohort to {out}")


@cli.command("train")
@click.option("--cohort", "cohort_path", required=True, help="Cohort CSV.")
@click.option("--kind", type=click.Choice([k.value for k in FeatureKind]), required=True, help="Feature kind.")
@click.option("--population", type=click.Choice([p.value for p in PopulationTag]), required=True,
              help="Population whose TRAIN/VAL records are used.")
@click.option("--out", "out_path", required=True, help="Model file to write.")
@seed_option
def train_cmd(cohort_path, kind, population, out_path, seed):
    """Fit a logistic-regression model on one population."""
    kind, pop = FeatureKind.parse(kind), PopulationTag.parse(population)
    with _stage("load cohort"):
        cohort = cohort_from_csv(_read(cohort_path), kind, cohort_path)
    settings = RunSettings(seed=seed)
    with _stage("train"):
        model = train(cohort, pop, train_config_for(settings, f"{kind.value}-{pop.value}"))
    with _stage("write"):
        atomic_write(Path(out_path), model_to_text(model))
    click.echo(f"trained {model.model_id} ({model.dimension} features)")


@cli.command()
@click.option("--model", "model_path", required=True, help="Model file from `train`.")
@click.option("--cohort", "cohort_path", required=True, help="Cohort CSV.")
@click.option("--split", type=click.Choice([s.value for s in SplitTag]), default="test", show_default=True)
@click.option("--population", type=click.Choice([p.value for p in PopulationTag]), default=None,
              help="Keep only this population [default: both].")
@click.option("--out", "out_path", required=True, help="Scored CSV to write.")
@seed_option
def score(model_path, cohort_path, split, population, out_path, seed):
    """Score one split of a cohort with a trained model."""
    with _stage("load model"):
        model = model_from_text(_read(model_path), model_path)
    with _stage("load cohort"):
        cohort = cohort_from_csv(_read(cohort_path), model.feature_kind, cohort_path)
    with _stage("score"):
        scored = score_cohort(model, cohort, SplitTag.parse(split))
        if population:
            scored = partition_by(scored, PopulationTag.parse(population))
    with _stage("write"):
        atomic_write(Path(out_path), scored_to_csv(scored))
    click.echo(f"scored {len(scored)} records with {model.model_id}")


@cli.command()
@click.argument("scored_p")
@click.argument("scored_q")
@click.argument("out_path")
@click.option("--model-id", default=None, help="Model id to record [default: P file name up to its first dot].")
@seed_option
@with_bootstrap
def diagnose(scored_p, scored_q, out_path, model_id, seed, replicates, level, threads):
    """Stability diagnostics for externally scored populations P and Q."""
    _check_replicates(replicates)
    model_id = model_id or Path(scored_p).name.split(".", 1)[0]
    with _stage("load scores"):
        P = scored_from_csv(_read(scored_p), model_id, scored_p)
        Q = scored_from_csv(_read(scored_q), model_id, scored_q)
    with _stage("diagnose"):
        doc = diagnosis_document(P, Q, _settings(seed, replicates, level, threads))
    with _stage("write"):
        atomic_write(Path(out_path), json.dumps(doc, indent=2, allow_nan=False) + "\n")
    summary = doc["predictive_stability"]["summaries"][0]["value"]
    ks = ", ".join(f"y={c['label']} {c['statistic']:.3f}" for c in doc["covariate_stability"])
    click.echo(f"{model_id}: KS {ks}; predictive stability {summary:+.3f}")


@cli.command()
@click.option("--report", "report_path", required=True, help="report.json from `run-all`.")
@click.option("--out", "out_dir", required=True, help="Directory for figures and summary.txt.")
@seed_option
def report(report_path, out_dir, seed):
    """Re-render figures and the text summary from a saved report."""
    from .plotting import emit_plots

    with _stage("load report"):
        rep = parse_json(_read(report_path))
    problems = rep.validate()
    if problems:
        raise StageError("load report", PortabilityError("; ".join(problems)))
    with _stage("plot"):
        emit_plots(rep, Path(out_dir) / "figures")
        atomic_write(Path(out_dir) / "summary.txt", text_summary(rep))
    click.echo(text_summary(rep), nl=False)


@cli.command("run-all")
@click.option("--config", "config_path", default=None, help="Simulator settings file (key = value lines).")
@click.option("--out", "out_dir", required=True, help="Output directory.")
@seed_option
@with_bootstrap
def run_all(config_path, out_dir, seed, replicates, level, threads):
    """Simulate, train all four models, diagnose and write the full report."""
    _check_replicates(replicates)
    with _stage("config"):
        config = load_config(config_path) if config_path else SimConfig()
    with _stage("pipeline"):
        result = run_pipeline(config, _settings(seed, replicates, level, threads))
    problems = result.report.validate()
    if problems:
        raise StageError("report", PortabilityError("; ".join(problems)))
    with _stage("write"):
        write_run(result, out_dir)
    click.echo(text_summary(result.report), nl=False)


def main(argv=None) -> int:
    """Run the CLI and return its exit code instead of raising ``SystemExit``."""
    try:
        rv = cli.main(args=argv, prog_name="portastat", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.exceptions.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except StageError as exc:
        click.echo(f"error in {exc.stage}: {exc.exc}", err=True)
        return exc.code
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
