"""Rank and ECDF statistics: AUC, empirical CDFs, two-sample KS, cross-generalization AUC grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    DegenerateLabels,
    EmptySample,
    FeatureKind,
    PopulationTag,
    ScoredSet,
    ValidationError,
    partition_by,
)

_KS_TERM_TOL = 1e-10


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outscores a random negative, ties counted as 1/2.

    Computed from midranks (Mann-Whitney U), which equals the trapezoidal
    area under the ROC curve.

    Raises:
        DegenerateLabels: if every label is the same.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size != y.size:
        raise ValidationError(f"scores and labels differ in length ({s.size} vs {y.size})")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels(f"AUC needs both classes; got {n_pos} positives and {n_neg} negatives")
    ranks = _midranks(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    # boundaries of tie groups in sorted order
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], values.size]
    group_rank = (starts + ends + 1) / 2.0  # mean of 1-based ranks start+1..end
    ranks = np.empty(values.size, dtype=float)
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


@dataclass(frozen=True)
class ECDF:
    """Right-continuous empirical CDF: ``F(t)`` is the fraction of the sample at or below ``t``."""

    support: np.ndarray
    cumulative: np.ndarray
    n: int

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.support, t, side="right")
        cum = np.r_[0.0, self.cumulative]
        out = cum[idx]
        return float(out) if out.ndim == 0 else out


def ecdf(sample: Sequence[float]) -> ECDF:
    x = np.asarray(sample, dtype=float).reshape(-1)
    if x.size == 0:
        raise EmptySample("ECDF of an empty sample")
    if not np.all(np.isfinite(x)):
        raise ValidationError("ECDF sample contains non-finite values")
    support, counts = np.unique(x, return_counts=True)
    return ECDF(support, np.cumsum(counts) / x.size, int(x.size))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float
    n_a: int
    n_b: int


def kolmogorov_sf(lam: float) -> float:
    """Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)."""
    if lam <= 0.0:
        return 1.0
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 == 1 else -term
        if term < _KS_TERM_TOL:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(a)
    b = np.sort(b)
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> KSResult:
    """Two-sample Kolmogorov-Smirnov distance with an asymptotic p-value.

    The sup of ``|F_a - F_b|`` is taken over the pooled sample points, where
    a difference of two step functions attains its maximum. The p-value uses
    the effective size ``n_e = n_a n_b / (n_a + n_b)`` with the
    ``sqrt(n_e) + 0.12 + 0.11 / sqrt(n_e)`` small-sample correction.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size == 0:
        raise EmptySample("first KS sample is empty")
    if b.size == 0:
        raise EmptySample("second KS sample is empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("KS samples must be finite")
    d = ks_statistic(a, b)
    n_e = a.size * b.size / (a.size + b.size)
    root = math.sqrt(n_e)
    p = kolmogorov_sf((root + 0.12 + 0.11 / root) * d)
    return KSResult(d, p, int(a.size), int(b.size))


@dataclass(frozen=True)
class GeneralizationMatrix:
    """AUC of each train population's model on each test population.

    ``cells`` maps ``(train_pop, test_pop)`` to an AUC; ``intervals`` holds the
    optional bootstrap ``(lo, hi)`` for the same keys.
    """

    feature_kind: FeatureKind
    cells: Mapping
    intervals: Optional[Mapping] = None

    def __post_init__(self):
        for key in _CELL_ORDER:
            if key not in self.cells:
                raise ValidationError(f"generalization matrix missing cell {key[0].value}->{key[1].value}")
            if not 0.0 <= self.cells[key] <= 1.0:
                raise ValidationError(f"AUC {self.cells[key]} outside [0, 1]")
        if self.intervals is not None:
            for key, (lo, hi) in self.intervals.items():
                if not lo <= self.cells[key] <= hi:
                    raise ValidationError(
                        f"interval ({lo}, {hi}) excludes AUC {self.cells[key]} for {key[0].value}->{key[1].value}"
                    )

    def __getitem__(self, key):
        return self.cells[key]

    def interval(self, train_pop: PopulationTag, test_pop: PopulationTag):
        if self.intervals is None:
            return None
        return self.intervals.get((train_pop, test_pop))


_CELL_ORDER = [(tp, qp) for tp in PopulationTag for qp in PopulationTag]


def generalization_matrix(
    scored: Mapping[PopulationTag, ScoredSet],
    feature_kind: FeatureKind,
    intervals: Optional[Mapping] = None,
) -> GeneralizationMatrix:
    """Build the 2x2 grid: cell ``(tp, qp)`` is the AUC of ``scored[tp]`` restricted to population ``qp``."""
    cells = {}
    for tp, qp in _CELL_ORDER:
        if tp not in scored:
            raise ValidationError(f"no scores for models trained on {tp.value}")
        part = partition_by(scored[tp], qp)
        try:
            cells[(tp, qp)] = auc(part.scores, part.labels)
        except DegenerateLabels as exc:
            raise DegenerateLabels(f"cell train={tp.value} test={qp.value}: {exc}") from None
    return GeneralizationMatrix(feature_kind, cells, intervals)
