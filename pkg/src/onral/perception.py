"""Perception models: per-context classifiers, kappa fusion weights, and the
2x2 observation confusion matrices that feed the per-query decision models.

Classifiers are small regularized logistic models trained by a fixed number of
full-batch gradient steps, so training is deterministic and dependency-free.
Cross-validation is always at object granularity: executions of one object
never appear on both sides of a fold split.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, FeatureInstance
from .domain import (
    AttributeId,
    BehaviorId,
    ConfigurationError,
    Context,
    DataError,
)

_GD_STEPS = 120
_GD_RATE = 0.5
_GD_RIDGE = 1e-2


@dataclass(frozen=True)
class ContextClassifier:
    """Linear decision rule for one (attribute, context) pair.

    ``parameters`` is the raw-feature-space weight vector with the bias as its
    last entry. A degenerate classifier (too little data to fit) has all-zero
    parameters and outputs probability 0.5 everywhere.
    """

    attribute: AttributeId
    context: Context
    parameters: np.ndarray
    trained_on: int

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(features)
        z = x @ self.parameters[:-1] + self.parameters[-1]
        return 1.0 / (1.0 + np.exp(-np.clip(z, -35.0, 35.0)))


@dataclass(frozen=True)
class ContextWeight:
    """Fusion weight for one (attribute, context): Cohen's kappa of
    cross-validated predictions, clamped to [0, 1] when fusing."""

    attribute: AttributeId
    context: Context
    kappa: float

    @property
    def fusion_weight(self) -> float:
        return max(self.kappa, 0.0)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row-stochastic 2x2 observation channel for (attribute, behavior).

    Rows index the true value (false, true), columns the observed value.
    Laplace smoothing keeps every cell strictly inside (0, 1).
    """

    attribute: AttributeId
    behavior: BehaviorId
    cells: np.ndarray
    support: int

    def __post_init__(self) -> None:
        if self.cells.shape != (2, 2):
            raise ConfigurationError("confusion matrix must be 2x2")
        if not np.allclose(self.cells.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigurationError("confusion matrix rows must sum to 1")

    def row(self, true_value: bool) -> np.ndarray:
        return self.cells[int(true_value)]


def uniform_confusion(attribute: AttributeId, behavior: BehaviorId) -> ConfusionMatrix:
    return ConfusionMatrix(attribute, behavior, np.full((2, 2), 0.5), support=0)


# -- training -------------------------------------------------------------------


def train_context_classifier(
    attribute: AttributeId,
    context: Context,
    features: np.ndarray,
    labels: np.ndarray,
) -> ContextClassifier:
    """Fit the logistic model; falls back to the degenerate classifier unless
    both classes are present."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n = features.shape[0]
    if n == 0:
        return ContextClassifier(attribute, context, np.zeros(1), 0)
    if not np.all(np.isfinite(features)):
        raise DataError(
            f"non-finite features while training ({attribute.name}, {context.key})"
        )
    if labels.all() or not labels.any():
        return ContextClassifier(attribute, context, np.zeros(features.shape[1] + 1), n)

    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd[sd < 1e-12] = 1.0
    x = (features - mu) / sd
    y = labels.astype(float)

    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(_GD_STEPS):
        z = np.clip(x @ w + b, -35.0, 35.0)
        p = 1.0 / (1.0 + np.exp(-z))
        err = p - y
        grad_w = x.T @ err / n + _GD_RIDGE * w
        grad_b = err.mean()
        w -= _GD_RATE * grad_w
        b -= _GD_RATE * grad_b

    # Fold the standardization back into raw-space parameters.
    w_raw = w / sd
    b_raw = b - float(w_raw @ mu)
    return ContextClassifier(attribute, context, np.append(w_raw, b_raw), n)


# -- cross-validation and kappa ---------------------------------------------------


def object_folds(object_names: Sequence[str], folds: int, fold_seed: int = 0) -> dict[str, int]:
    """Deterministic object -> fold assignment (round-robin over a seeded
    shuffle of the distinct names)."""
    distinct = sorted(set(object_names))
    order = np.random.default_rng(fold_seed).permutation(len(distinct))
    return {distinct[j]: i % folds for i, j in enumerate(order)}


def cohen_kappa(truth: np.ndarray, predicted: np.ndarray) -> float:
    """Cohen's kappa for two boolean vectors; 0 when chance agreement is total."""
    truth = np.asarray(truth, dtype=bool)
    predicted = np.asarray(predicted, dtype=bool)
    n = truth.shape[0]
    if n == 0:
        return 0.0
    po = float((truth == predicted).mean())
    p_yes = truth.mean() * predicted.mean()
    p_no = (1 - truth.mean()) * (1 - predicted.mean())
    pe = float(p_yes + p_no)
    if 1.0 - pe < 1e-12:
        return 0.0
    return (po - pe) / (1.0 - pe)


def cross_val_probabilities(
    attribute: AttributeId,
    context: Context,
    features: np.ndarray,
    labels: np.ndarray,
    objects: Sequence[str],
    folds: int,
    fold_seed: int = 0,
) -> np.ndarray:
    """Held-out positive-class probability per example, with folds cut at
    object granularity."""
    assignment = object_folds(objects, folds, fold_seed)
    fold_of = np.array([assignment[o] for o in objects])
    probs = np.full(features.shape[0], 0.5)
    for f in range(folds):
        test = fold_of == f
        if not test.any():
            continue
        clf = train_context_classifier(
            attribute, context, features[~test], labels[~test]
        )
        probs[test] = clf.predict_proba(features[test])
    return probs


def kappa_weight(
    attribute: AttributeId,
    context: Context,
    features: np.ndarray,
    labels: np.ndarray,
    objects: Sequence[str],
    folds: int = 5,
    fold_seed: int = 0,
) -> ContextWeight:
    """Cross-validated kappa for one (attribute, context); degenerate inputs
    (single class, or fewer examples than folds) score 0."""
    if folds < 2:
        raise ConfigurationError("cross-validation needs at least 2 folds")
    labels = np.asarray(labels, dtype=bool)
    if labels.shape[0] < folds or labels.all() or not labels.any():
        return ContextWeight(attribute, context, 0.0)
    probs = cross_val_probabilities(
        attribute, context, features, labels, objects, folds, fold_seed
    )
    return ContextWeight(attribute, context, cohen_kappa(labels, probs > 0.5))


# -- fusion ----------------------------------------------------------------------


def fused_probability(probs: Sequence[float], weights: Sequence[float]) -> float:
    """Kappa-weighted mean of per-context probabilities; 0.5 when all weights
    vanish. Invariant under uniform positive rescaling of the weights."""
    total = float(sum(weights))
    if total <= 0.0:
        return 0.5
    return float(sum(w * p for w, p in zip(weights, probs)) / total)


def fuse_prediction(
    entries: Sequence[tuple[ContextClassifier, ContextWeight]],
    instances: Sequence[FeatureInstance],
) -> float:
    """Fused positive-class probability for one behavior execution.

    ``entries`` holds (classifier, weight) pairs for the behavior's contexts;
    ``instances`` one FeatureInstance per context of the same behavior.
    """
    if not entries:
        return 0.5
    behavior = entries[0][0].context.behavior
    by_ctx = {clf.context.key: (clf, w) for clf, w in entries}
    probs, weights = [], []
    for inst in instances:
        if inst.context.behavior != behavior:
            raise ConfigurationError(
                f"instance context {inst.context.key} does not belong to "
                f"behavior '{behavior.name}'"
            )
        if inst.context.key not in by_ctx:
            raise ConfigurationError(f"no classifier for context {inst.context.key}")
        clf, weight = by_ctx[inst.context.key]
        probs.append(float(clf.predict_proba(inst.features)[0]))
        weights.append(weight.fusion_weight)
    return fused_probability(probs, weights)


# -- confusion-matrix estimation ---------------------------------------------------


def _context_cv(
    dataset: Dataset,
    attribute: AttributeId,
    context: Context,
    folds: int,
    fold_seed: int,
) -> tuple[dict[tuple[str, int], float], float]:
    """Held-out probability per labeled execution of one context plus the
    context's cross-validated kappa."""
    feats, labels, objects = dataset.labeled_examples(attribute, context)
    if labels.shape[0] == 0:
        return {}, 0.0
    rows = dataset._labeled_ctx[(attribute.name, context.key)]
    n_objects = len(set(objects))
    eff_folds = min(folds, n_objects)
    if eff_folds < 2 or labels.all() or not labels.any():
        probs = np.full(labels.shape[0], 0.5)
        kappa = 0.0
    else:
        probs = cross_val_probabilities(
            attribute, context, feats, labels, objects, eff_folds, fold_seed
        )
        kappa = cohen_kappa(labels, probs > 0.5)
    per_exec = {(r[2], r[3]): float(p) for r, p in zip(rows, probs)}
    return per_exec, kappa


def estimate_confusion_matrix(
    attribute: AttributeId,
    behavior: BehaviorId,
    dataset: Dataset,
    folds: int = 5,
    fold_seed: int = 0,
    return_audit: bool = False,
):
    """Confusion matrix from object-level cross-validation.

    Each labeled execution of the behavior is scored by fusing its contexts'
    held-out probabilities (kappa-weighted), thresholded at 0.5 and tallied
    into the 2x2 table by (true label, predicted label). Cells get a Laplace
    pseudo-count of 1 and rows are normalized. With no labeled executions the
    uniform matrix is returned.

    With ``return_audit`` the per-execution fold provenance is returned too,
    so tests can verify that no execution was scored by a model trained on
    its own object.
    """
    if folds < 2:
        raise ConfigurationError("cross-validation needs at least 2 folds")
    executions = dataset.labeled_executions(attribute, behavior)
    counts = np.ones((2, 2))
    audit = []
    if executions:
        contexts = [c for c in dataset.contexts if c.behavior == behavior]
        cv = {c.key: _context_cv(dataset, attribute, c, folds, fold_seed) for c in contexts}
        object_names = sorted({obj for obj, _, _, _ in executions})
        eff_folds = min(folds, len(object_names))
        assignment = object_folds(object_names, eff_folds, fold_seed) if eff_folds >= 2 else {}
        weights = {key: max(k, 0.0) for key, (_, k) in cv.items()}
        for obj, trial, label, by_ctx in executions:
            probs, ws = [], []
            for ckey in by_ctx:
                per_exec, _ = cv[ckey]
                probs.append(per_exec.get((obj, trial), 0.5))
                ws.append(weights[ckey])
            predicted = fused_probability(probs, ws) > 0.5
            counts[int(label), int(predicted)] += 1.0
            if return_audit:
                fold = assignment.get(obj, 0)
                train_objects = sorted(o for o, f in assignment.items() if f != fold)
                audit.append({"object": obj, "trial": trial, "fold": fold,
                              "train_objects": train_objects})
    cells = counts / counts.sum(axis=1, keepdims=True)
    matrix = ConfusionMatrix(attribute, behavior, cells, support=len(executions))
    if return_audit:
        return matrix, audit
    return matrix


# -- batch bundle -------------------------------------------------------------------


class PerceptionBundle:
    """Everything the episode loop needs from one perception recompute:
    full-data classifiers, fusion weights and confusion matrices."""

    def __init__(
        self,
        classifiers: dict[tuple[str, tuple[str, str]], ContextClassifier],
        weights: dict[tuple[str, tuple[str, str]], ContextWeight],
        thetas: dict[tuple[str, str], ConfusionMatrix],
        behavior_kappas: dict[tuple[str, str], float],
    ) -> None:
        self.classifiers = classifiers
        self.weights = weights
        self.thetas = thetas
        self.behavior_kappas = behavior_kappas

    def entries_for(
        self, attribute: AttributeId, behavior: BehaviorId, contexts: Sequence[Context]
    ) -> list[tuple[ContextClassifier, ContextWeight]]:
        return [
            (self.classifiers[(attribute.name, c.key)], self.weights[(attribute.name, c.key)])
            for c in contexts
            if c.behavior == behavior
        ]

    def predict_bits(
        self,
        attributes: Sequence[AttributeId],
        behavior: BehaviorId,
        instances: Sequence[FeatureInstance],
        contexts: Sequence[Context],
    ) -> tuple[bool, ...]:
        """Observed value per queried attribute: fused probability > 0.5."""
        bits = []
        for attribute in attributes:
            entries = self.entries_for(attribute, behavior, contexts)
            bits.append(fuse_prediction(entries, instances) > 0.5)
        return tuple(bits)

    def theta(self, attribute: AttributeId, behavior: BehaviorId) -> ConfusionMatrix:
        return self.thetas[(attribute.name, behavior.name)]


def build_perception_bundle(
    dataset: Dataset,
    attributes: Sequence[AttributeId] | None = None,
    folds: int = 5,
    fold_seed: int = 0,
) -> PerceptionBundle:
    """Train classifiers, weights and confusion matrices for all (attribute,
    behavior) pairs from the current labeled data."""
    attributes = dataset.attributes if attributes is None else list(attributes)
    classifiers: dict = {}
    weights: dict = {}
    thetas: dict = {}
    behavior_kappas: dict = {}
    for attribute in attributes:
        cv_by_ctx: dict[tuple[str, str], tuple[dict, float]] = {}
        for context in dataset.contexts:
            feats, labels, _ = dataset.labeled_examples(attribute, context)
            classifiers[(attribute.name, context.key)] = train_context_classifier(
                attribute, context, feats, labels
            )
            per_exec, kappa = _context_cv(dataset, attribute, context, folds, fold_seed)
            cv_by_ctx[context.key] = (per_exec, kappa)
            weights[(attribute.name, context.key)] = ContextWeight(attribute, context, kappa)
        for behavior in dataset.behaviors:
            counts = np.ones((2, 2))
            executions = dataset.labeled_executions(attribute, behavior)
            truths, preds = [], []
            for obj, trial, label, by_ctx in executions:
                probs = [cv_by_ctx[c][0].get((obj, trial), 0.5) for c in by_ctx]
                ws = [max(cv_by_ctx[c][1], 0.0) for c in by_ctx]
                predicted = fused_probability(probs, ws) > 0.5
                counts[int(label), int(predicted)] += 1.0
                truths.append(label)
                preds.append(predicted)
            cells = counts / counts.sum(axis=1, keepdims=True)
            thetas[(attribute.name, behavior.name)] = ConfusionMatrix(
                attribute, behavior, cells, support=len(executions)
            )
            behavior_kappas[(attribute.name, behavior.name)] = (
                cohen_kappa(np.array(truths, dtype=bool), np.array(preds, dtype=bool))
                if truths
                else 0.0
            )
    return PerceptionBundle(classifiers, weights, thetas, behavior_kappas)


def rank_attribute_learnability(
    dataset: Dataset,
    candidates: Sequence[AttributeId],
    folds: int = 5,
    fold_seed: int = 0,
) -> list[AttributeId]:
    """Candidates sorted by how learnable they look: descending max-over-
    behaviors kappa, ties broken by positive-example count, then name."""
    if not candidates:
        raise ConfigurationError("no candidate attributes to rank")
    bundle = build_perception_bundle(dataset, candidates, folds, fold_seed)
    scores = []
    for attribute in candidates:
        best = max(
            bundle.behavior_kappas[(attribute.name, b.name)] for b in dataset.behaviors
        )
        positives = 0
        for context in dataset.contexts:
            _, labels, _ = dataset.labeled_examples(attribute, context)
            positives += int(labels.sum())
        scores.append((-best, -positives, attribute.name, attribute))
    return [item[3] for item in sorted(scores, key=lambda t: t[:3])]
