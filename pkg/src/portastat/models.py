"""L2-regularized logistic regression trained by mini-batch gradient descent.

Early stopping keeps the epoch with the best validation AUC.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import (
    Cohort,
    DegenerateLabels,
    DimensionMismatch,
    FeatureKind,
    NonFiniteLoss,
    PopulationTag,
    RngHandle,
    ScoredSet,
    SplitTag,
    ValidationError,
)
from .metrics import auc


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    train_population: PopulationTag
    feature_kind: FeatureKind

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise NonFiniteLoss("model parameters are not finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    def __eq__(self, other):
        if not isinstance(other, LinearModel):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and self.bias == other.bias
            and self.train_population is other.train_population
            and self.feature_kind is other.feature_kind
        )

    __hash__ = None

    @property
    def dimension(self) -> int:
        return self.weights.size

    @property
    def model_id(self) -> str:
        return model_id(self.feature_kind, self.train_population)


def model_id(feature_kind: FeatureKind, train_population: PopulationTag) -> str:
    return f"{feature_kind.value}-{train_population.value}"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    l2_penalty: float = 1e-4
    epochs: int = 200
    batch_size: int = 64
    early_stop_patience: int = 20
    rng: RngHandle = field(default_factory=lambda: RngHandle(0, "train"))

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.l2_penalty >= 0:
            raise ValueError("l2_penalty must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be nonnegative")


def predict_many(model: LinearModel, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.dimension:
        raise DimensionMismatch(f"features have shape {X.shape}, model expects {model.dimension} columns")
    return expit(X @ model.weights + model.bias)


def predict(model: LinearModel, features) -> float:
    """Logistic of ``weights . features + bias``."""
    x = np.asarray(features, dtype=float).reshape(-1)
    if x.size != model.dimension:
        raise DimensionMismatch(f"feature vector has length {x.size}, model expects {model.dimension}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("feature vector contains non-finite values")
    return float(expit(x @ model.weights + model.bias))


def loss_and_grad(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray, l2_penalty: float):
    """Mean negative log-likelihood plus ``l2_penalty * |w|^2``, with its gradient.

    Returns ``(loss, grad_w, grad_b)``.
    """
    z = X @ weights + bias
    # -log p(y|z) = log(1 + e^z) - y z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + l2_penalty * np.dot(weights, weights))
    resid = expit(z) - y
    grad_w = X.T @ resid / X.shape[0] + 2.0 * l2_penalty * weights
    grad_b = float(np.mean(resid))
    return loss, grad_w, grad_b


@dataclass
class TrainingTrace:
    weights: np.ndarray
    bias: float
    best_epoch: int
    train_loss: list
    val_auc: list


def gradient_descent(
    X: np.ndarray,
    y: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainConfig,
) -> TrainingTrace:
    """Mini-batch descent with per-epoch validation-AUC early stopping.

    ``train_loss`` records the full training objective after each epoch.
    """
    n, d = X.shape
    y = y.astype(float)
    gen = config.rng.generator()
    w = np.zeros(d)
    b = 0.0
    best = (-np.inf, w.copy(), b, 0)
    since_best = 0
    losses, val_aucs = [], []
    # divergence is detected explicitly below, so overflow warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            order = gen.permutation(n)
            for start in range(0, n, config.batch_size):
                batch = order[start : start + config.batch_size]
                _, gw, gb = loss_and_grad(w, b, X[batch], y[batch], config.l2_penalty)
                w -= config.learning_rate * gw
                b -= config.learning_rate * gb
            loss, _, _ = loss_and_grad(w, b, X, y, config.l2_penalty)
            if not (np.isfinite(loss) and np.all(np.isfinite(w)) and np.isfinite(b)):
                raise NonFiniteLoss(
                    f"training loss became non-finite at epoch {epoch}; "
                    f"learning rate {config.learning_rate} is probably too large"
                )
            losses.append(loss)
            score = auc(expit(X_val @ w + b), y_val)
            val_aucs.append(score)
            if score > best[0]:
                best = (score, w.copy(), b, epoch)
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.early_stop_patience:
                    break
    _, w_best, b_best, epoch_best = best
    return TrainingTrace(w_best, b_best, epoch_best, losses, val_aucs)


def train(cohort: Cohort, population: PopulationTag, config: Optional[TrainConfig] = None) -> LinearModel:
    """Fit a model on the TRAIN records of ``population``, early-stopping on its VAL records."""
    config = config or TrainConfig()
    _, X, y, _ = cohort.select(population, SplitTag.TRAIN)
    _, X_val, y_val, _ = cohort.select(population, SplitTag.VAL)
    if len(y) == 0 or len(y_val) == 0:
        raise ValidationError(f"population {population.value} needs non-empty train and val splits")
    if y.min() == y.max():
        raise DegenerateLabels(f"train split of population {population.value} has a single class")
    if y_val.min() == y_val.max():
        raise DegenerateLabels(f"val split of population {population.value} has a single class")
    trace = gradient_descent(X, y, X_val, y_val, config)
    return LinearModel(trace.weights, trace.bias, population, cohort.feature_kind)


def score_cohort(model: LinearModel, cohort: Cohort, split: SplitTag) -> ScoredSet:
    """Score every record of ``split`` from both populations."""
    if cohort.dimension != model.dimension:
        raise DimensionMismatch(f"cohort dimension {cohort.dimension} != model dimension {model.dimension}")
    ids, X, y, pops = cohort.select(split=split)
    scores = predict_many(model, X) if len(ids) else np.empty(0)
    return ScoredSet(model.model_id, ids, scores, y, pops)


# ---------------------------------------------------------------------------
# text serialization
# ---------------------------------------------------------------------------


def model_to_text(model: LinearModel) -> str:
    lines = [
        f"model_id: {model.model_id}",
        f"feature_kind: {model.feature_kind.value}",
        f"train_population: {model.train_population.value}",
        f"bias: {model.bias!r}",
        "weights: " + " ".join(repr(float(w)) for w in model.weights),
    ]
    return "\n".join(lines) + "\n"


def model_from_text(text: str, source: str = "<model>") -> LinearModel:
    fields = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ValidationError(f"{source}:{lineno}: expected 'key: value'")
        fields[key.strip()] = value.strip()
    missing = {"model_id", "feature_kind", "train_population", "bias", "weights"} - fields.keys()
    if missing:
        raise ValidationError(f"{source}: missing fields {sorted(missing)}")
    try:
        weights = np.array([float(v) for v in fields["weights"].split()])
        bias = float(fields["bias"])
    except ValueError as exc:
        raise ValidationError(f"{source}: {exc}") from None
    model = LinearModel(
        weights,
        bias,
        PopulationTag.parse(fields["train_population"]),
        FeatureKind.parse(fields["feature_kind"]),
    )
    if model.model_id != fields["model_id"]:
        raise ValidationError(f"{source}: model_id {fields['model_id']!r} disagrees with kind/population")
    return model
