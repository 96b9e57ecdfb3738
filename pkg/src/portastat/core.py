"""Shared data model: population/split tags, cohorts, scored sets and seeded streams.

Cohorts keep one :class:`Record` per patient so that malformed input can be
represented and reported by :func:`validate_cohort`; numerical code works on
the stacked arrays exposed by :meth:`Cohort.arrays`. Scored sets are stored
column-wise because every diagnostic only needs (score, label, population).
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np


class PortabilityError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PortabilityError):
    """Input data violates a documented format or invariant."""


class DegenerateLabels(PortabilityError):
    """All labels in a sample belong to one class."""


class EmptySample(PortabilityError):
    """A statistic was requested on an empty sample."""


class EmptyConditional(PortabilityError):
    """A (population, label) cell needed by a diagnostic has no entries."""


class NoComparableBins(PortabilityError):
    """No stability bin holds entries from both populations."""


class InsufficientData(PortabilityError):
    """Too few entries to form the requested estimate."""


class DimensionMismatch(PortabilityError):
    """Feature vector length does not match the model or cohort dimension."""


class NonFiniteLoss(PortabilityError):
    """Training diverged; usually the learning rate is too large."""


class CalibrationFailure(PortabilityError):
    """Prevalence calibration did not converge."""


class PopulationTag(enum.Enum):
    LOW_USE = "low"
    HIGH_USE = "high"

    @classmethod
    def parse(cls, text: str) -> "PopulationTag":
        try:
            return cls(text)
        except ValueError:
            raise ValidationError(f"unknown population {text!r}; expected 'low' or 'high'") from None

    @property
    def code(self) -> int:
        return 0 if self is PopulationTag.LOW_USE else 1

    @classmethod
    def from_code(cls, code: int) -> "PopulationTag":
        return cls.LOW_USE if code == 0 else cls.HIGH_USE


class SplitTag(enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"

    @classmethod
    def parse(cls, text: str) -> "SplitTag":
        try:
            return cls(text)
        except ValueError:
            raise ValidationError(f"unknown split {text!r}; expected train, val or test") from None

    @property
    def code(self) -> int:
        return list(SplitTag).index(self)


class FeatureKind(enum.Enum):
    EHR_LIKE = "ehr"
    EKG_LIKE = "ekg"

    @classmethod
    def parse(cls, text: str) -> "FeatureKind":
        try:
            return cls(text)
        except ValueError:
            raise ValidationError(f"unknown feature kind {text!r}; expected 'ehr' or 'ekg'") from None


LOW = PopulationTag.LOW_USE
HIGH = PopulationTag.HIGH_USE


@dataclass(frozen=True)
class RngHandle:
    """A named, reproducible random stream.

    The stream is derived from ``seed`` and a SHA-256 digest of
    ``stream_label``, so it does not depend on creation order, thread
    scheduling or platform (PCG64 is bit-reproducible).
    """

    seed: int
    stream_label: str = ""

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def child(self, label: str) -> "RngHandle":
        sep = "/" if self.stream_label else ""
        return RngHandle(self.seed, f"{self.stream_label}{sep}{label}")

    def seed_sequence(self) -> np.random.SeedSequence:
        digest = hashlib.sha256(self.stream_label.encode("utf-8")).digest()
        words = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=words)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))


@dataclass(frozen=True, eq=False)
class Record:
    id: str
    features: np.ndarray
    label: int
    population: PopulationTag
    split: SplitTag

    def __post_init__(self):
        feats = np.array(self.features, dtype=float)
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    def __eq__(self, other):
        if not isinstance(other, Record):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.population is other.population
            and self.split is other.split
            and self.features.shape == other.features.shape
            and bool(np.array_equal(self.features, other.features))
        )

    __hash__ = None


@dataclass(frozen=True)
class CohortArrays:
    ids: tuple
    features: np.ndarray
    labels: np.ndarray
    population: np.ndarray
    split: np.ndarray

    def mask(self, population: Optional[PopulationTag] = None, split: Optional[SplitTag] = None) -> np.ndarray:
        keep = np.ones(len(self.ids), dtype=bool)
        if population is not None:
            keep &= self.population == population.code
        if split is not None:
            keep &= self.split == split.code
        return keep


@dataclass(frozen=True, eq=False)
class Cohort:
    """Labeled records of one feature kind, tagged by population and split.

    Construction does not enforce the invariants; call :func:`validate_cohort`
    (or :meth:`check`) before using a cohort loaded from outside.
    """

    dimension: int
    feature_kind: FeatureKind
    records: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.feature_kind is other.feature_kind
            and len(self.records) == len(other.records)
            and all(a == b for a, b in zip(self.records, other.records))
        )

    __hash__ = None

    def check(self) -> "Cohort":
        problems = validate_cohort(self)
        if problems:
            shown = "; ".join(problems[:5])
            more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
            raise ValidationError(f"invalid cohort: {shown}{more}")
        return self

    @cached_property
    def _arrays(self) -> CohortArrays:
        n = len(self.records)
        feats = np.empty((n, self.dimension), dtype=float)
        for i, rec in enumerate(self.records):
            if rec.features.shape != (self.dimension,):
                raise DimensionMismatch(
                    f"record {rec.id!r} has {rec.features.size} features, cohort dimension is {self.dimension}"
                )
            feats[i] = rec.features
        feats.flags.writeable = False
        labels = np.fromiter((r.label for r in self.records), dtype=np.int8, count=n)
        pops = np.fromiter((r.population.code for r in self.records), dtype=np.int8, count=n)
        splits = np.fromiter((r.split.code for r in self.records), dtype=np.int8, count=n)
        return CohortArrays(tuple(r.id for r in self.records), feats, labels, pops, splits)

    def arrays(self) -> CohortArrays:
        return self._arrays

    def select(self, population: Optional[PopulationTag] = None, split: Optional[SplitTag] = None):
        """Return ``(ids, features, labels, population_codes)`` for one cell of the cohort."""
        arr = self.arrays()
        keep = arr.mask(population, split)
        idx = np.flatnonzero(keep)
        return (
            tuple(arr.ids[i] for i in idx),
            arr.features[keep],
            arr.labels[keep],
            arr.population[keep],
        )

    @classmethod
    def from_arrays(
        cls,
        feature_kind: FeatureKind,
        ids: Sequence[str],
        features: np.ndarray,
        labels: Sequence[int],
        populations: Sequence[PopulationTag],
        splits: Sequence[SplitTag],
    ) -> "Cohort":
        features = np.array(features, dtype=float)
        features.flags.writeable = False
        records = tuple(
            Record(i, row, int(y), p, s) for i, row, y, p, s in zip(ids, features, labels, populations, splits)
        )
        return cls(features.shape[1], feature_kind, records)


def validate_cohort(cohort: Cohort) -> list[str]:
    """List every broken cohort invariant; an empty list means the cohort is valid."""
    problems = []
    if not isinstance(cohort.dimension, (int, np.integer)) or cohort.dimension <= 0:
        problems.append(f"cohort: dimension must be a positive integer, got {cohort.dimension!r}")
    seen = set()
    for rec in cohort.records:
        if rec.id in seen:
            problems.append(f"record {rec.id!r}: duplicate id")
        seen.add(rec.id)
        if rec.features.ndim != 1 or rec.features.size != cohort.dimension:
            problems.append(
                f"record {rec.id!r}: feature length {rec.features.size} != cohort dimension {cohort.dimension}"
            )
        if not np.all(np.isfinite(rec.features)):
            problems.append(f"record {rec.id!r}: non-finite feature value")
        if rec.label not in (0, 1):
            problems.append(f"record {rec.id!r}: label {rec.label!r} is not 0 or 1")
        if not isinstance(rec.population, PopulationTag):
            problems.append(f"record {rec.id!r}: population {rec.population!r} is not a PopulationTag")
        if not isinstance(rec.split, SplitTag):
            problems.append(f"record {rec.id!r}: split {rec.split!r} is not a SplitTag")
    return problems


@dataclass(frozen=True, eq=False)
class ScoredSet:
    """Model scores paired with true labels and population tags, one entry per record."""

    model_id: str
    ids: tuple
    scores: np.ndarray
    labels: np.ndarray
    population: np.ndarray
    _checked: bool = field(default=True, repr=False)

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        scores = np.array(self.scores, dtype=float).reshape(-1)
        labels = np.array(self.labels).reshape(-1)
        pops = np.array(
            [p.code if isinstance(p, PopulationTag) else p for p in self.population]
            if not isinstance(self.population, np.ndarray)
            else self.population
        ).reshape(-1)
        n = len(ids)
        if not (scores.size == labels.size == pops.size == n):
            raise ValidationError(
                f"scored set {self.model_id!r}: column lengths differ "
                f"(ids={n}, scores={scores.size}, labels={labels.size}, population={pops.size})"
            )
        if self._checked:
            bad = np.flatnonzero(~((scores >= 0.0) & (scores <= 1.0)))
            if bad.size:
                i = bad[0]
                raise ValidationError(f"entry {ids[i]!r}: score {scores[i]!r} outside [0, 1]")
            bad = np.flatnonzero((labels != 0) & (labels != 1))
            if bad.size:
                raise ValidationError(f"entry {ids[bad[0]]!r}: label {labels[bad[0]]!r} is not 0 or 1")
            bad = np.flatnonzero((pops != 0) & (pops != 1))
            if bad.size:
                raise ValidationError(f"entry {ids[bad[0]]!r}: unknown population code {pops[bad[0]]!r}")
            if len(set(ids)) != n:
                seen = set()
                dup = next(i for i in ids if i in seen or seen.add(i))
                raise ValidationError(f"scored set {self.model_id!r}: duplicate record id {dup!r}")
        for arr in (scores, labels, pops):
            arr.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int8, copy=False))
        object.__setattr__(self, "population", pops.astype(np.int8, copy=False))

    @classmethod
    def from_entries(cls, model_id: str, entries: Iterable[tuple]) -> "ScoredSet":
        entries = list(entries)
        return cls(
            model_id,
            [e[0] for e in entries],
            [e[1] for e in entries],
            [e[2] for e in entries],
            [e[3].code for e in entries],
        )

    @classmethod
    def empty(cls, model_id: str = "") -> "ScoredSet":
        return cls(model_id, (), np.empty(0), np.empty(0, dtype=np.int8), np.empty(0, dtype=np.int8))

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, ScoredSet):
            return NotImplemented
        return (
            self.model_id == other.model_id
            and self.ids == other.ids
            and np.array_equal(self.scores, other.scores)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.population, other.population)
        )

    __hash__ = None

    @property
    def entries(self) -> list[tuple]:
        return [
            (i, float(s), int(y), PopulationTag.from_code(int(p)))
            for i, s, y, p in zip(self.ids, self.scores, self.labels, self.population)
        ]

    def _subset(self, keep: np.ndarray) -> "ScoredSet":
        idx = np.flatnonzero(keep)
        return ScoredSet(
            self.model_id,
            tuple(self.ids[i] for i in idx),
            self.scores[idx],
            self.labels[idx],
            self.population[idx],
            _checked=False,
        )

    def resample(self, indices: np.ndarray) -> "ScoredSet":
        """Entries at ``indices`` (with repetition). The result may repeat record ids."""
        indices = np.asarray(indices, dtype=np.intp)
        return ScoredSet(
            self.model_id,
            tuple(self.ids[i] for i in indices),
            self.scores[indices],
            self.labels[indices],
            self.population[indices],
            _checked=False,
        )


def partition_by(scored: ScoredSet, population: PopulationTag, label: Optional[int] = None) -> ScoredSet:
    """Entries from ``population`` (and with ``label``, if given), in their original order."""
    keep = scored.population == population.code
    if label is not None:
        keep &= scored.labels == label
    return scored._subset(keep)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

PathLike = Union[str, Path]


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"{where}: {text!r} is not a decimal number") from None
    if not math.isfinite(value):
        raise ValidationError(f"{where}: non-finite value {text!r}")
    return value


def _parse_label(text: str, where: str) -> int:
    if text not in ("0", "1"):
        raise ValidationError(f"{where}: label {text!r} is not 0 or 1")
    return int(text)


def cohort_to_csv(cohort: Cohort) -> str:
    header = ["id", "population", "split", "label"] + [f"f{j}" for j in range(cohort.dimension)]
    lines = [",".join(header)]
    for rec in cohort.records:
        if "," in rec.id:
            raise ValidationError(f"record id {rec.id!r} contains a comma")
        feats = ",".join(map(_fmt, rec.features.tolist()))
        lines.append(f"{rec.id},{rec.population.value},{rec.split.value},{rec.label},{feats}")
    return "\n".join(lines) + "\n"


def cohort_from_csv(text: str, feature_kind: FeatureKind, source: str = "<cohort>") -> Cohort:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValidationError(f"{source}: empty file")
    header = lines[0].split(",")
    if header[:4] != ["id", "population", "split", "label"]:
        raise ValidationError(f"{source}:1: header must start with id,population,split,label")
    dim = len(header) - 4
    if dim <= 0 or header[4:] != [f"f{j}" for j in range(dim)]:
        raise ValidationError(f"{source}:1: feature columns must be f0..f{{D-1}}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        where = f"{source}:{lineno}"
        cols = line.split(",")
        if len(cols) != len(header):
            raise ValidationError(f"{where}: expected {len(header)} columns, found {len(cols)}")
        feats = [_parse_float(c, where) for c in cols[4:]]
        records.append(
            Record(
                cols[0],
                np.array(feats),
                _parse_label(cols[3], where),
                PopulationTag.parse(cols[1]),
                SplitTag.parse(cols[2]),
            )
        )
    return Cohort(dim, feature_kind, tuple(records))


def scored_to_csv(scored: ScoredSet) -> str:
    lines = ["id,population,label,score"]
    for i, s, y, p in zip(scored.ids, scored.scores.tolist(), scored.labels.tolist(), scored.population.tolist()):
        if "," in i:
            raise ValidationError(f"record id {i!r} contains a comma")
        lines.append(f"{i},{PopulationTag.from_code(p).value},{y},{_fmt(s)}")
    return "\n".join(lines) + "\n"


def scored_from_csv(text: str, model_id: str, source: str = "<scores>") -> ScoredSet:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != "id,population,label,score":
        raise ValidationError(f"{source}:1: header must be id,population,label,score")
    ids, scores, labels, pops = [], [], [], []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        where = f"{source}:{lineno}"
        cols = line.split(",")
        if len(cols) != 4:
            raise ValidationError(f"{where}: expected 4 columns, found {len(cols)}")
        score = _parse_float(cols[3], where)
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"{where}: score {cols[3]} outside [0, 1] for id {cols[0]!r}")
        if cols[0] in seen:
            raise ValidationError(f"{where}: duplicate id {cols[0]!r}")
        seen.add(cols[0])
        ids.append(cols[0])
        pops.append(PopulationTag.parse(cols[1]).code)
        labels.append(_parse_label(cols[2], where))
        scores.append(score)
    return ScoredSet(model_id, ids, np.array(scores), np.array(labels, dtype=np.int8), np.array(pops, dtype=np.int8))
