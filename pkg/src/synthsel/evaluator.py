"""Downstream classifier, reward extraction, and reporting metrics.

The classifier trains from scratch on the original-plus-selected features at
every evaluation and is deterministic given (inputs, config, rng stream).
The RL reward is the maximum validation accuracy over the last five epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numkit as nk
from .errors import ConfigError, ValidationError
from .featurestore import FeatureSet
from .numkit import Matrix, RngStream, Tensor

REWARD_WINDOW = 5

CLASSIFIER_MODELS = ("softmax-regression", "one-hidden-layer")


@dataclass
class ClassifierConfig:
    model: str = "softmax-regression"
    hidden_width: int = 32
    epochs: int = 30
    minibatch_size: int = 32
    learning_rate: float = 0.2
    weight_decay: float = 1e-4
    init_seed: int | None = None

    def __post_init__(self):
        if self.model not in CLASSIFIER_MODELS:
            raise ConfigError(f"unknown classifier model {self.model!r}")
        if self.epochs < REWARD_WINDOW:
            raise ConfigError(
                f"classifier needs at least {REWARD_WINDOW} epochs for the reward window, "
                f"got {self.epochs}"
            )
        if self.hidden_width <= 0 or self.minibatch_size <= 0:
            raise ConfigError("widths and minibatch size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class TrainedClassifier:
    model: str
    weights: dict[str, Matrix]

    def predict_proba(self, features: Matrix) -> Matrix:
        x = nk.as_matrix(features)
        if self.model == "softmax-regression":
            logits = x @ self.weights["w"] + self.weights["b"]
        else:
            hidden = np.maximum(x @ self.weights["w1"] + self.weights["b1"], 0.0)
            logits = hidden @ self.weights["w2"] + self.weights["b2"]
        return nk.softmax_rows(logits)

    def predict(self, features: Matrix) -> np.ndarray:
        return np.argmax(self.predict_proba(features), axis=1)


@dataclass
class TrainingCurve:
    val_accuracy: list[float]
    model: TrainedClassifier

    def __post_init__(self):
        for a in self.val_accuracy:
            if not (0.0 <= a <= 1.0):
                raise ValidationError(f"validation accuracy {a} outside [0, 1]")


def _init_classifier(cfg: ClassifierConfig, dim: int, k: int, gen) -> dict[str, Tensor]:
    def uniform(rows, cols):
        bound = 1.0 / np.sqrt(rows)
        return gen.uniform(-bound, bound, size=(rows, cols))

    if cfg.model == "softmax-regression":
        raw = {"w": uniform(dim, k), "b": np.zeros((1, k))}
    else:
        raw = {
            "w1": uniform(dim, cfg.hidden_width), "b1": np.zeros((1, cfg.hidden_width)),
            "w2": uniform(cfg.hidden_width, k), "b2": np.zeros((1, k)),
        }
    return {name: nk.parameter(v, name) for name, v in raw.items()}


def classifier_loss(params: dict[str, Tensor], features: Matrix, labels: np.ndarray,
                    cfg: ClassifierConfig) -> Tensor:
    """Mean cross-entropy plus L2 decay on the weight matrices."""
    x = nk.constant(features)
    if cfg.model == "softmax-regression":
        logits = nk.t_add(nk.t_matmul(x, params["w"]), params["b"])
        decayed = (params["w"],)
    else:
        hidden = nk.t_relu(nk.t_add(nk.t_matmul(x, params["w1"]), params["b1"]))
        logits = nk.t_add(nk.t_matmul(hidden, params["w2"]), params["b2"])
        decayed = (params["w1"], params["w2"])
    logp = nk.t_log_softmax_rows(logits)
    picked = nk.t_pick(logp, np.arange(len(labels)), labels)
    loss = nk.t_scale(nk.t_mean_all(picked), -1.0)
    if cfg.weight_decay > 0:
        for w in decayed:
            loss = nk.t_add(loss, nk.t_scale(nk.t_sum_all(nk.t_mul(w, w)), cfg.weight_decay))
    return loss


def train_classifier(train: FeatureSet, val: FeatureSet, cfg: ClassifierConfig,
                     rng: RngStream) -> TrainingCurve:
    """Minibatch gradient descent on cross-entropy for cfg.epochs epochs,
    recording validation accuracy after each one."""
    if train.class_count < 2:
        raise ValidationError("classifier needs at least two classes")
    if train.dim != val.dim or train.class_count != val.class_count:
        raise ValidationError(
            f"train ({train.dim}d/{train.class_count}k) and validation "
            f"({val.dim}d/{val.class_count}k) sets do not match"
        )
    gen = rng.generator()
    init_gen = (RngStream(cfg.init_seed, "classifier").generator()
                if cfg.init_seed is not None else gen)
    params = _init_classifier(cfg, train.dim, train.class_count, init_gen)
    tensors = list(params.values())
    n = train.n
    curve = []
    for _ in range(cfg.epochs):
        perm = gen.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            nk.zero_grads(tensors)
            loss = classifier_loss(params, train.features[idx], train.labels[idx], cfg)
            nk.backward(loss)
            for p in tensors:
                p.value -= cfg.learning_rate * p.grad
        model = TrainedClassifier(cfg.model, {k: v.value.copy() for k, v in params.items()})
        curve.append(float((model.predict(val.features) == val.labels).mean()))
    return TrainingCurve(curve, TrainedClassifier(
        cfg.model, {k: v.value.copy() for k, v in params.items()}))


def reward_from_curve(curve: TrainingCurve) -> float:
    """Maximum validation accuracy over the last five epochs."""
    if len(curve.val_accuracy) < REWARD_WINDOW:
        raise ValidationError(
            f"curve has {len(curve.val_accuracy)} epochs, need >= {REWARD_WINDOW}"
        )
    return max(curve.val_accuracy[-REWARD_WINDOW:])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    accuracy: float
    auc: float
    sensitivity: float
    specificity: float
    per_class: dict[int, dict[str, float]]
    n_test: int
    confusion: np.ndarray
    excluded_classes: list[int] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        """Fixed field order, headline metrics rounded to 6 decimals."""
        return {
            "accuracy": round(self.accuracy, 6),
            "auc": round(self.auc, 6),
            "sensitivity": round(self.sensitivity, 6),
            "specificity": round(self.specificity, 6),
            "n_test": self.n_test,
            "macro_aggregation": "one-vs-rest",
            "excluded_classes": list(self.excluded_classes),
            "per_class": {
                str(c): {k: round(v, 6) for k, v in vals.items()}
                for c, vals in sorted(self.per_class.items())
            },
            "confusion": self.confusion.astype(int).tolist(),
        }


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their mid-rank."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Rank-based ROC area (trapezoidal with mid-rank tie handling)."""
    pos = int(positives.sum())
    neg = len(positives) - pos
    if pos == 0 or neg == 0:
        raise ValidationError("AUC needs both positives and negatives")
    ranks = _average_ranks(np.asarray(scores, dtype=np.float64))
    return float((ranks[positives].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def compute_metrics(scores: Matrix, labels) -> MetricsReport:
    """Accuracy plus macro one-vs-rest AUC, sensitivity, and specificity.

    Classes absent from the labels are excluded from the macro averages and
    listed in the report.
    """
    scores = nk.as_matrix(scores)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = scores.shape
    if labels.shape != (n,):
        raise ValidationError(f"expected {n} labels, got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValidationError(f"labels must lie in [0, {k})")
    row_sums = scores.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-9:
        raise ValidationError("score rows must be probability vectors summing to 1")
    preds = np.argmax(scores, axis=1)  # tie -> lowest class id
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    accuracy = float(np.trace(confusion) / n)
    per_class: dict[int, dict[str, float]] = {}
    excluded: list[int] = []
    aucs, sens, specs = [], [], []
    for c in range(k):
        support = int((labels == c).sum())
        if support == 0:
            excluded.append(c)
            continue
        positives = labels == c
        tp = int(confusion[c, c])
        fp = int(confusion[:, c].sum() - tp)
        tn = n - support - fp
        entry = {"sensitivity": tp / support, "support": float(support)}
        sens.append(entry["sensitivity"])
        if support < n:
            entry["specificity"] = tn / (n - support)
            entry["auc"] = binary_auc(scores[:, c], positives)
            specs.append(entry["specificity"])
            aucs.append(entry["auc"])
        per_class[c] = entry
    if not sens:
        raise ValidationError("no class has any test sample")
    return MetricsReport(
        accuracy=accuracy,
        auc=float(np.mean(aucs)) if aucs else float("nan"),
        sensitivity=float(np.mean(sens)),
        specificity=float(np.mean(specs)) if specs else float("nan"),
        per_class=per_class,
        n_test=n,
        confusion=confusion,
        excluded_classes=excluded,
    )


def evaluate_selection(
    original: FeatureSet,
    selected: Sequence[tuple[int, np.ndarray]],
    val: FeatureSet,
    test: FeatureSet,
    cfg: ClassifierConfig,
    rng: RngStream,
) -> tuple[float, MetricsReport]:
    """Retrain from scratch on original + selected; reward from the validation
    curve, report from the test set."""
    if selected:
        extra = np.stack([np.asarray(vec, dtype=np.float64).reshape(-1) for _, vec in selected])
        if extra.shape[1] != original.dim:
            raise ValidationError(
                f"selected features have dimension {extra.shape[1]}, expected {original.dim}"
            )
        extra_labels = np.array([c for c, _ in selected], dtype=np.int64)
        expanded = FeatureSet(
            np.concatenate([original.features, extra]),
            np.concatenate([original.labels, extra_labels]),
            original.class_count,
            "train",
        )
    else:
        expanded = original
    curve = train_classifier(expanded, val, cfg, rng)
    reward = reward_from_curve(curve)
    report = compute_metrics(curve.model.predict_proba(test.features), test.labels)
    return reward, report
