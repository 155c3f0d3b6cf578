"""k-fold cross-validation and binary classification metrics (positive class = +1)."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from dementia_svm.errors import DataError
from dementia_svm.features import ScaleMode, fit_standardizer, as_feature_matrix
from dementia_svm.svm import KernelSpec, TrainConfig, train

METRIC_NAMES = ("train_accuracy", "test_accuracy", "precision", "recall", "mcc")


@dataclass(frozen=True, eq=False)
class FoldPlan:
    n: int
    k: int
    assignments: np.ndarray
    seed: int
    stratified: bool

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def make_folds(labels: Sequence[int], k: int = 10, seed: int = 0,
               stratified: bool = True) -> FoldPlan:
    """Seeded shuffle followed by round-robin fold assignment.

    When stratified, each class is shuffled and dealt separately, continuing
    the round-robin position across classes so total fold sizes stay within
    one of each other.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise DataError(f"need k >= 2 folds, got {k}")
    if n < k:
        raise DataError(f"cannot split {n} examples into {k} folds")
    rng = np.random.default_rng(seed)
    assignments = np.empty(n, dtype=np.int64)
    if stratified:
        classes = np.unique(labels)
        start = 0
        for cls in classes:
            members = rng.permutation(np.flatnonzero(labels == cls))
            assignments[members] = (start + np.arange(len(members))) % k
            start = (start + len(members)) % k
    else:
        order = rng.permutation(n)
        assignments[order] = np.arange(n) % k
    return FoldPlan(n, k, assignments, seed, stratified)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(predictions, truths) -> ConfusionMatrix:
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise DataError(f"{predictions.size} predictions for {truths.size} labels")
    if predictions.size == 0:
        raise DataError("empty prediction set")
    pos_p, pos_t = predictions == 1, truths == 1
    return ConfusionMatrix(
        tp=int(np.sum(pos_p & pos_t)),
        fp=int(np.sum(pos_p & ~pos_t)),
        tn=int(np.sum(~pos_p & ~pos_t)),
        fn=int(np.sum(~pos_p & pos_t)),
    )


def metrics(cm: ConfusionMatrix) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, mcc); zero denominators give 0."""
    if cm.total == 0:
        raise DataError("empty confusion matrix")
    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    accuracy = (tp + tn) / cm.total
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom else 0.0
    return float(accuracy), float(precision), float(recall), float(mcc)


class StandardizeMode(enum.Enum):
    PER_FOLD = "per-fold"
    GLOBAL = "global"


@dataclass(frozen=True)
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    train_accuracy: float
    test_accuracy: float
    precision: float
    recall: float
    mcc: float
    confusion: ConfusionMatrix
    converged: bool
    n_support: int


@dataclass(frozen=True)
class CvReport:
    per_fold: tuple[FoldResult, ...]
    averages: dict

    @property
    def converged(self) -> bool:
        return all(f.converged for f in self.per_fold)

    def to_dict(self) -> dict:
        return {
            "averages": dict(self.averages),
            "converged": self.converged,
            "folds": [asdict(f) for f in self.per_fold],
        }


def cross_validate(
    features,
    labels,
    kernel: KernelSpec,
    train_config: TrainConfig,
    fold_plan: FoldPlan,
    standardize: StandardizeMode = StandardizeMode.PER_FOLD,
    scale_mode: ScaleMode = ScaleMode.STD,
    fold_features: Callable[[int], np.ndarray] | None = None,
) -> CvReport:
    """Train on k-1 folds, test on the held-out fold, for every fold.

    ``features`` is an (n, d) matrix of active features or a list of
    FeatureVectors. ``fold_features(fold)`` may supply a fold-specific matrix
    instead (used when eigenbrains are refit on each training split).
    """
    base, _ = as_feature_matrix(features)
    y = np.asarray(labels)
    if base.shape[0] == 0:
        raise DataError("empty dataset")
    if base.shape[0] != len(y) or fold_plan.n != len(y):
        raise DataError("fold plan, features and labels disagree on the number of examples")
    standardize = StandardizeMode(standardize)

    results = []
    for fold in range(fold_plan.k):
        x = base if fold_features is None else np.asarray(fold_features(fold), dtype=np.float64)
        train_idx = fold_plan.train_indices(fold)
        test_idx = fold_plan.test_indices(fold)
        fit_rows = train_idx if standardize is StandardizeMode.PER_FOLD else np.arange(len(y))
        scaler = fit_standardizer(x[fit_rows], scale_mode)
        xs = scaler.transform(x)
        model = train(xs[train_idx], y[train_idx], kernel, train_config)
        train_cm = confusion(model.predict(xs[train_idx]), y[train_idx])
        test_cm = confusion(model.predict(xs[test_idx]), y[test_idx])
        accuracy, precision, recall, mcc = metrics(test_cm)
        results.append(FoldResult(
            fold=fold,
            n_train=len(train_idx),
            n_test=len(test_idx),
            train_accuracy=metrics(train_cm)[0],
            test_accuracy=accuracy,
            precision=precision,
            recall=recall,
            mcc=mcc,
            confusion=test_cm,
            converged=model.converged,
            n_support=len(model.dual_coefs),
        ))
    averages = {
        name: float(np.mean([getattr(r, name) for r in results])) for name in METRIC_NAMES
    }
    return CvReport(tuple(results), averages)
