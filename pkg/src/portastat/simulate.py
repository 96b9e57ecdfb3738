"""Synthetic two-population cohorts with a behavioral observation process.

Every patient has latent physiological risk factors ``z ~ N(0, I)``. The
label depends on ``z`` only through the risk score ``w* . z``. EKG-like
features measure ``z`` directly (same mixing and noise in both populations).
EHR-like features are binary history indicators driven by ``z`` but only
recorded with a population-specific probability, so high-use patients have
denser records for the same physiology.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import expit

from .core import (
    HIGH,
    LOW,
    CalibrationFailure,
    Cohort,
    FeatureKind,
    PopulationTag,
    RngHandle,
    SplitTag,
    ValidationError,
)

LABEL_SLOPE = 1.5
EHR_ALIGNMENT = 1.0  # pull of each history direction toward the risk direction
EHR_SCALE_RANGE = (0.2, 0.8)
PILOT_SIZE = 200_000
BISECTION_ITERATIONS = 60
BISECTION_TOL = 1e-6


@dataclass(frozen=True)
class SimConfig:
    seed: RngHandle = dataclasses.field(default_factory=lambda: RngHandle(0, "simulate"))
    n_train_per_pop: int = 7000
    n_val_per_pop: int = 1000
    n_test_low: int = 2298
    n_test_high: int = 4491
    d_latent: int = 8
    d_ehr: int = 200
    d_ekg: int = 20
    prevalence_low: float = 0.119
    prevalence_high: float = 0.177
    observe_prob_low: float = 0.25
    observe_prob_high: float = 0.75
    ekg_noise_sd: float = 0.5
    behavior_background_rate: float = 0.05

    def __post_init__(self):
        counts = ("n_train_per_pop", "n_val_per_pop", "n_test_low", "n_test_high", "d_latent", "d_ehr", "d_ekg")
        for name in counts:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        for name in ("prevalence_low", "prevalence_high"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1)")
        for name in ("observe_prob_low", "observe_prob_high"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in (0, 1]")
        if not self.ekg_noise_sd > 0:
            raise ValidationError("ekg_noise_sd must be positive")
        if not 0.0 <= self.behavior_background_rate < 1.0:
            raise ValidationError("behavior_background_rate must lie in [0, 1)")

    def split_sizes(self, population: PopulationTag) -> dict:
        n_test = self.n_test_low if population is LOW else self.n_test_high
        return {SplitTag.TRAIN: self.n_train_per_pop, SplitTag.VAL: self.n_val_per_pop, SplitTag.TEST: n_test}

    def prevalence(self, population: PopulationTag) -> float:
        return self.prevalence_low if population is LOW else self.prevalence_high

    def observe_prob(self, population: PopulationTag) -> float:
        return self.observe_prob_low if population is LOW else self.observe_prob_high

    def to_text(self) -> str:
        lines = [f"seed = {self.seed.seed}"]
        for f in dataclasses.fields(self):
            if f.name != "seed":
                lines.append(f"{f.name} = {getattr(self, f.name)!r}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


_INT_FIELDS = {"n_train_per_pop", "n_val_per_pop", "n_test_low", "n_test_high", "d_latent", "d_ehr", "d_ekg"}


def parse_config(text: str, source: str = "<config>") -> SimConfig:
    """Read ``key = value`` lines (``#`` comments allowed); omitted keys keep their defaults."""
    known = {f.name for f in dataclasses.fields(SimConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        key, value = key.strip(), value.strip()
        where = f"{source}:{lineno}"
        if not sep or not key:
            raise ValidationError(f"{where}: expected 'key = value'")
        if key not in known:
            raise ValidationError(f"{where}: unknown setting {key!r}")
        try:
            if key == "seed":
                values[key] = RngHandle(int(value), "simulate")
            elif key in _INT_FIELDS:
                values[key] = int(value)
            else:
                values[key] = float(value)
        except ValueError:
            raise ValidationError(f"{where}: bad value {value!r} for {key}") from None
    return SimConfig(**values)


def load_config(path: Union[str, Path]) -> SimConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


@dataclass(frozen=True)
class GroundTruth:
    ids: tuple
    latent: np.ndarray
    risk_score: np.ndarray
    label_prob: np.ndarray

    def to_csv(self) -> str:
        lines = ["id,risk_score,label_prob"]
        for i, r, p in zip(self.ids, self.risk_score.tolist(), self.label_prob.tolist()):
            lines.append(f"{i},{r!r},{p!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class _Structure:
    risk_direction: np.ndarray
    ekg_mixing: np.ndarray
    ehr_directions: np.ndarray
    ehr_scales: np.ndarray


def _draw_structure(config: SimConfig) -> _Structure:
    gen = config.seed.child("structure").generator()
    w = gen.standard_normal(config.d_latent)
    w /= np.linalg.norm(w)
    mixing = gen.standard_normal((config.d_ekg, config.d_latent))
    raw = EHR_ALIGNMENT * w + gen.standard_normal((config.d_ehr, config.d_latent))
    directions = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    scales = gen.uniform(*EHR_SCALE_RANGE, size=config.d_ehr)
    return _Structure(w, mixing, directions, scales)


def calibrate_offset(risk: np.ndarray, prevalence: float, slope: float = LABEL_SLOPE) -> float:
    """Offset ``b`` such that the mean of ``logistic(slope * risk + b)`` equals ``prevalence``."""
    lo, hi = -30.0, 30.0
    for _ in range(BISECTION_ITERATIONS):
        mid = 0.5 * (lo + hi)
        rate = float(np.mean(expit(slope * risk + mid)))
        if abs(rate - prevalence) < BISECTION_TOL:
            return mid
        if rate < prevalence:
            lo = mid
        else:
            hi = mid
    raise CalibrationFailure(
        f"could not reach prevalence {prevalence} within {BISECTION_ITERATIONS} bisection steps (last {rate:.6f})"
    )


def generate(config: SimConfig = SimConfig()):
    """Simulate both populations.

    Returns ``(ehr_cohort, ekg_cohort, truth)``; the two cohorts cover the
    same patients with identical ids, labels, populations and splits.
    """
    structure = _draw_structure(config)
    pilot = config.seed.child("pilot").generator().standard_normal(PILOT_SIZE)

    ids, pops, splits = [], [], []
    latent, ehr, ekg, labels, risk, prob = [], [], [], [], [], []
    for pop in (LOW, HIGH):
        sizes = config.split_sizes(pop)
        n = sum(sizes.values())
        offset = calibrate_offset(pilot, config.prevalence(pop))
        stream = config.seed.child(pop.value)

        z = stream.child("latent").generator().standard_normal((n, config.d_latent))
        r = z @ structure.risk_direction
        p = expit(LABEL_SLOPE * r + offset)
        y = (stream.child("labels").generator().random(n) < p).astype(np.int8)

        noise = stream.child("ekg").generator().standard_normal((n, config.d_ekg))
        x_ekg = z @ structure.ekg_mixing.T + config.ekg_noise_sd * noise

        ehr_gen = stream.child("ehr").generator()
        history_p = expit((z @ structure.ehr_directions.T) * structure.ehr_scales)
        history = ehr_gen.random((n, config.d_ehr)) < history_p
        observed = ehr_gen.random((n, config.d_ehr)) < config.observe_prob(pop)
        background = ehr_gen.random((n, config.d_ehr)) < config.behavior_background_rate
        x_ehr = ((history & observed) | background).astype(float)

        prefix = "L" if pop is LOW else "H"
        ids.extend(f"{prefix}{i:06d}" for i in range(n))
        pops.extend([pop] * n)
        for split, count in sizes.items():
            splits.extend([split] * count)
        latent.append(z)
        ehr.append(x_ehr)
        ekg.append(x_ekg)
        labels.append(y)
        risk.append(r)
        prob.append(p)

    labels = np.concatenate(labels)
    ehr_cohort = Cohort.from_arrays(FeatureKind.EHR_LIKE, ids, np.vstack(ehr), labels, pops, splits)
    ekg_cohort = Cohort.from_arrays(FeatureKind.EKG_LIKE, ids, np.vstack(ekg), labels, pops, splits)
    truth = GroundTruth(tuple(ids), np.vstack(latent), np.concatenate(risk), np.concatenate(prob))
    return ehr_cohort, ekg_cohort, truth
