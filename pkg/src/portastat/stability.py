"""Covariate and predictive stability of one model's scores across two populations.

Throughout, ``scored_P`` holds the model's scores on population P and
``scored_Q`` on population Q. Curve differences are ``E_Q[y|s] - E_P[y|s]``.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    EmptyConditional,
    InsufficientData,
    NoComparableBins,
    PortabilityError,
    RngHandle,
    ScoredSet,
    ValidationError,
)
from .metrics import KSResult, ks_two_sample

log = logging.getLogger(__name__)

N_BINS = 5
MIN_CURVE_ENTRIES = 10
MAX_FAILED_FRACTION = 0.05


@dataclass(frozen=True)
class CovariateStabilityResult:
    model_id: str
    label: int
    ks: KSResult


@dataclass(frozen=True)
class StabilityBin:
    mean_y_P: Optional[float]
    mean_y_Q: Optional[float]
    diff: Optional[float]
    n_P: int
    n_Q: int

    @property
    def comparable(self) -> bool:
        return self.n_P > 0 and self.n_Q > 0


@dataclass(frozen=True)
class StabilityCurve:
    model_id: str
    bin_edges: tuple
    bins: tuple

    @property
    def n_P(self) -> int:
        return sum(b.n_P for b in self.bins)

    @property
    def n_Q(self) -> int:
        return sum(b.n_Q for b in self.bins)

    @property
    def diffs(self) -> list:
        return [b.diff for b in self.bins]


@dataclass(frozen=True)
class StabilitySummary:
    model_id: str
    value: float
    bootstrap_interval: Optional[tuple] = None

    def __post_init__(self):
        if self.bootstrap_interval is not None:
            lo, hi = self.bootstrap_interval
            if not lo <= self.value <= hi:
                raise ValidationError(f"interval ({lo}, {hi}) excludes summary value {self.value}")


def _same_model(scored_P: ScoredSet, scored_Q: ScoredSet) -> str:
    if scored_P.model_id != scored_Q.model_id:
        raise ValidationError(
            f"scored sets come from different models: {scored_P.model_id!r} vs {scored_Q.model_id!r}"
        )
    return scored_P.model_id


def covariate_stability(scored_P: ScoredSet, scored_Q: ScoredSet, label: int) -> CovariateStabilityResult:
    """KS distance between the score distributions of class ``label`` in P and in Q."""
    model_id = _same_model(scored_P, scored_Q)
    a = scored_P.scores[scored_P.labels == label]
    b = scored_Q.scores[scored_Q.labels == label]
    if a.size == 0:
        raise EmptyConditional(f"model {model_id!r}: population P has no entries with label {label}")
    if b.size == 0:
        raise EmptyConditional(f"model {model_id!r}: population Q has no entries with label {label}")
    return CovariateStabilityResult(model_id, int(label), ks_two_sample(a, b))


def mixture_quintile_edges(scores_P: np.ndarray, scores_Q: np.ndarray) -> np.ndarray:
    """Bin edges at the quintiles of the equal mixture of the two score samples.

    Each P entry carries mass 1/(2 N_P) and each Q entry 1/(2 N_Q). An interior
    edge is the first pooled value at which the cumulative mass exceeds k/5, so
    the mass strictly below it is within one entry of k/5. Masses are kept as
    integers (scaled by 2 N_P N_Q) to make ties with k/5 exact.
    """
    n_p, n_q = scores_P.size, scores_Q.size
    pooled = np.concatenate([scores_P, scores_Q])
    weights = np.concatenate([np.full(n_p, n_q, dtype=np.int64), np.full(n_q, n_p, dtype=np.int64)])
    order = np.argsort(pooled, kind="mergesort")
    sorted_vals = pooled[order]
    cum = np.cumsum(weights[order])
    total = 2 * n_p * n_q
    edges = [sorted_vals[0]]
    for k in range(1, N_BINS):
        # first index with cum / total > k / N_BINS
        i = int(np.searchsorted(cum * N_BINS, k * total, side="right"))
        edges.append(sorted_vals[min(i, sorted_vals.size - 1)])
    edges.append(sorted_vals[-1])
    return np.array(edges, dtype=float)


def assign_bins(scores: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Left-closed bins ``[e_k, e_{k+1})``; the last bin also takes the maximum."""
    return np.searchsorted(edges[1:-1], scores, side="right")


def predictive_stability_curve(scored_P: ScoredSet, scored_Q: ScoredSet) -> StabilityCurve:
    """Per-quintile mean outcome in each population and their difference (Q minus P)."""
    model_id = _same_model(scored_P, scored_Q)
    if len(scored_P) == 0:
        raise EmptyConditional(f"model {model_id!r}: population P is empty")
    if len(scored_Q) == 0:
        raise EmptyConditional(f"model {model_id!r}: population Q is empty")
    if len(scored_P) + len(scored_Q) < MIN_CURVE_ENTRIES:
        raise InsufficientData(
            f"model {model_id!r}: {len(scored_P) + len(scored_Q)} entries, need at least {MIN_CURVE_ENTRIES}"
        )
    edges = mixture_quintile_edges(scored_P.scores, scored_Q.scores)
    bin_P = assign_bins(scored_P.scores, edges)
    bin_Q = assign_bins(scored_Q.scores, edges)
    n_P = np.bincount(bin_P, minlength=N_BINS)
    n_Q = np.bincount(bin_Q, minlength=N_BINS)
    pos_P = np.bincount(bin_P, weights=scored_P.labels, minlength=N_BINS)
    pos_Q = np.bincount(bin_Q, weights=scored_Q.labels, minlength=N_BINS)
    bins = []
    for k in range(N_BINS):
        m_p = float(pos_P[k] / n_P[k]) if n_P[k] else None
        m_q = float(pos_Q[k] / n_Q[k]) if n_Q[k] else None
        diff = m_q - m_p if m_p is not None and m_q is not None else None
        bins.append(StabilityBin(m_p, m_q, diff, int(n_P[k]), int(n_Q[k])))
    return StabilityCurve(model_id, tuple(float(e) for e in edges), tuple(bins))


def predictive_stability_summary(curve: StabilityCurve) -> StabilitySummary:
    """Signed average of the bin differences under the equal P/Q mixture.

    Bins missing either population are dropped and the remaining weights
    renormalized.
    """
    n_p_total, n_q_total = curve.n_P, curve.n_Q
    weights, diffs = [], []
    for b in curve.bins:
        if not b.comparable:
            continue
        weights.append((b.n_P / n_p_total + b.n_Q / n_q_total) / 2.0)
        diffs.append(b.diff)
    if not weights:
        raise NoComparableBins(f"model {curve.model_id!r}: no bin holds entries from both populations")
    w = np.array(weights)
    return StabilitySummary(curve.model_id, float(np.dot(w / w.sum(), diffs)))


@dataclass(frozen=True)
class BootstrapInterval:
    lo: float
    hi: float
    level: float
    replicates: int
    failed: int = 0

    def __iter__(self):
        return iter((self.lo, self.hi))

    def covering(self, value: float) -> "BootstrapInterval":
        """The interval widened, if needed, so that it contains the point estimate."""
        return dataclasses.replace(self, lo=min(self.lo, value), hi=max(self.hi, value))


def bootstrap_interval(
    statistic_fn: Callable[[ScoredSet, ScoredSet], float],
    scored_P: ScoredSet,
    scored_Q: ScoredSet,
    replicates: int,
    level: float,
    rng: RngHandle,
    threads: int = 1,
) -> BootstrapInterval:
    """Percentile bootstrap, resampling each population's entries with replacement.

    Replicate ``r`` draws from its own stream ``rng.child("rep{r}")``, so the
    interval does not depend on ``threads``. Replicates whose statistic raises
    a :class:`PortabilityError` are dropped; if more than 5% fail, the first
    failure is re-raised.
    """
    if replicates < 100:
        raise ValueError(f"need at least 100 bootstrap replicates, got {replicates}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    n_p, n_q = len(scored_P), len(scored_Q)

    def one(r: int):
        gen = rng.child(f"rep{r}").generator()
        idx_p = gen.integers(0, n_p, size=n_p) if n_p else np.empty(0, dtype=np.intp)
        idx_q = gen.integers(0, n_q, size=n_q) if n_q else np.empty(0, dtype=np.intp)
        try:
            return float(statistic_fn(scored_P.resample(idx_p), scored_Q.resample(idx_q)))
        except PortabilityError as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replicates), chunksize=max(1, replicates // (4 * threads))))
    else:
        results = [one(r) for r in range(replicates)]

    errors = [r for r in results if isinstance(r, Exception)]
    if len(errors) > MAX_FAILED_FRACTION * replicates:
        raise errors[0]
    if errors:
        log.info("bootstrap dropped %d of %d failed replicates", len(errors), replicates)
    values = np.array([r for r in results if not isinstance(r, Exception)])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
    return BootstrapInterval(float(lo), float(hi), level, replicates, len(errors))
