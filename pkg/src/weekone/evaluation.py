"""Class balancing, splitting protocols, and per-class metric reporting.

Evaluation follows a strict hygiene rule: oversampling happens after
splitting and only ever touches the training partition, so no duplicated
row can reach a test or validation fold.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ensembles
from .cohort import FeatureMatrix
from .errors import ConfigError, TrainingError
from .rng import child_seed, derive_rng

METRIC_KEYS = ["accuracy", "precision_0", "precision_1", "recall_0", "recall_1", "f1_0", "f1_1"]

Z_95 = 1.96


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[actual][predicted] for classes {0, 1}."""

    counts: tuple  # ((n00, n01), (n10, n11))

    @classmethod
    def from_labels(cls, actual, predicted) -> "ConfusionMatrix":
        a = np.asarray(actual, dtype=int)
        p = np.asarray(predicted, dtype=int)
        if a.shape != p.shape:
            raise ValueError("actual and predicted are not aligned")
        return cls(
            counts=(
                (int(((a == 0) & (p == 0)).sum()), int(((a == 0) & (p == 1)).sum())),
                (int(((a == 1) & (p == 0)).sum()), int(((a == 1) & (p == 1)).sum())),
            )
        )

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    zero_division: tuple = ()  # metric names whose denominator was 0


def _safe_ratio(num: float, den: float, name: str, flags: list) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def compute_metrics(cm: ConfusionMatrix) -> tuple:
    """(accuracy, {0: ClassMetrics, 1: ClassMetrics}) from a confusion matrix.

    Zero-denominator metrics come back as 0 and are listed in the class's
    ``zero_division`` flag.
    """
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    (n00, n01), (n10, n11) = cm.counts
    accuracy = (n00 + n11) / cm.total
    per_class = {}
    for c, tp, fp, fn in ((0, n00, n10, n01), (1, n11, n01, n10)):
        flags: list = []
        precision = _safe_ratio(tp, tp + fp, "precision", flags)
        recall = _safe_ratio(tp, tp + fn, "recall", flags)
        f1 = _safe_ratio(2 * precision * recall, precision + recall, "f1", flags)
        per_class[c] = ClassMetrics(precision=precision, recall=recall, f1=f1, zero_division=tuple(flags))
    return accuracy, per_class


def oversample(matrix: FeatureMatrix, seed: int = 0) -> FeatureMatrix:
    """Balance classes by duplicating minority rows (sampled with replacement).

    All original rows are retained in their order; duplicates are appended.
    """
    counts = matrix.class_counts()
    if counts[0] == 0 or counts[1] == 0:
        raise TrainingError("cannot balance a single-class matrix")
    minority = 0 if counts[0] < counts[1] else 1
    need = abs(counts[0] - counts[1])
    if need == 0:
        return matrix.subset(np.arange(matrix.n_rows))
    rng = derive_rng(seed)
    pool = np.nonzero(matrix.y == minority)[0]
    extra = rng.choice(pool, size=need, replace=True)
    return matrix.subset(np.concatenate([np.arange(matrix.n_rows), extra]))


def stratified_split(matrix: FeatureMatrix, test_fraction: float = 0.3, seed: int = 0) -> tuple:
    """Per-class shuffled partition into (train, test) matrices.

    Per-class test counts are round(class_count * test_fraction), kept
    inside [1, class_count - 1] so both sides always see both classes.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    counts = matrix.class_counts()
    if counts[0] < 2 or counts[1] < 2:
        raise ConfigError("each class needs at least 2 rows to split")
    rng = derive_rng(seed)
    test_idx = []
    for c in (0, 1):
        pool = np.nonzero(matrix.y == c)[0]
        n_test = int(np.rint(pool.size * test_fraction))
        n_test = min(max(n_test, 1), pool.size - 1)
        shuffled = rng.permutation(pool)
        test_idx.append(shuffled[:n_test])
    test = np.sort(np.concatenate(test_idx))
    train = np.setdiff1d(np.arange(matrix.n_rows), test)
    return matrix.subset(train), matrix.subset(test)


def kfold_indices(matrix: FeatureMatrix, k: int = 10, seed: int = 0) -> list:
    """Stratified k folds as (train_indices, validation_indices) pairs.

    Per-class fold sizes differ by at most one; validation folds partition
    the full index set.
    """
    if k < 2:
        raise ConfigError("k must be >= 2")
    counts = matrix.class_counts()
    if counts[0] < k or counts[1] < k:
        raise ConfigError(f"k={k} exceeds the smallest class count")
    rng = derive_rng(seed)
    chunks = {c: np.array_split(rng.permutation(np.nonzero(matrix.y == c)[0]), k) for c in (0, 1)}
    folds = []
    everything = np.arange(matrix.n_rows)
    for f in range(k):
        val = np.sort(np.concatenate([chunks[0][f], chunks[1][f]]))
        folds.append((np.setdiff1d(everything, val), val))
    return folds


@dataclass
class EvalReport:
    """Per-metric means and 95% margins over repeated evaluations."""

    learner: str
    course_id: str
    repeats: int
    means: dict
    margins: dict
    per_repeat: list = field(default_factory=list)
    zero_division: bool = False

    def to_json_dict(self) -> dict:
        return {
            "learner": self.learner,
            "course_id": self.course_id,
            "repeats": self.repeats,
            "means": {k: float(v) for k, v in self.means.items()},
            "margins": {k: float(v) for k, v in self.margins.items()},
            "per_repeat": [{k: float(v) for k, v in rec.items()} for rec in self.per_repeat],
            "zero_division": self.zero_division,
        }


def _metrics_record(actual, predicted) -> dict:
    accuracy, per_class = compute_metrics(ConfusionMatrix.from_labels(actual, predicted))
    rec = {"accuracy": accuracy}
    for c in (0, 1):
        rec[f"precision_{c}"] = per_class[c].precision
        rec[f"recall_{c}"] = per_class[c].recall
        rec[f"f1_{c}"] = per_class[c].f1
    rec["_zero_division"] = bool(per_class[0].zero_division or per_class[1].zero_division)
    return rec


def _aggregate(records: list, learner: str, course_id: str) -> EvalReport:
    repeats = len(records)
    means, margins = {}, {}
    for key in METRIC_KEYS:
        vals = np.array([rec[key] for rec in records])
        means[key] = float(vals.mean())
        margins[key] = float(Z_95 * vals.std(ddof=1) / np.sqrt(repeats)) if repeats > 1 else 0.0
    return EvalReport(
        learner=learner,
        course_id=course_id,
        repeats=repeats,
        means=means,
        margins=margins,
        per_repeat=[{k: rec[k] for k in METRIC_KEYS} for rec in records],
        zero_division=any(rec["_zero_division"] for rec in records),
    )


def _evaluate_once(
    matrix: FeatureMatrix,
    learner: str,
    hyper: dict,
    split_seed: int,
    balance_seed: int,
    train_seed: int,
    test_fraction: float,
    probe: Optional[Callable],
    repeat_index: int,
) -> dict:
    train_m, test_m = stratified_split(matrix, test_fraction=test_fraction, seed=split_seed)
    balanced = oversample(train_m, seed=balance_seed)
    if probe is not None:
        probe(repeat_index, balanced, test_m)
    model = ensembles.train(balanced, learner, seed=train_seed, **hyper)
    predicted = ensembles.predict_classes(model, test_m.X)
    return _metrics_record(test_m.y, predicted)


def repeated_holdout(
    matrix: FeatureMatrix,
    learner: str,
    hyper: Optional[dict] = None,
    repeats: int = 100,
    test_fraction: float = 0.3,
    seed: int = 0,
    threads: int = 1,
    course_id: str = "",
    probe: Optional[Callable] = None,
) -> EvalReport:
    """Repeatedly split at random, balance the training side, and evaluate.

    Each repeat owns RNG streams derived from (seed, repeat index), so runs
    reproduce bit-for-bit no matter how many threads execute them.  The
    test partition is never oversampled.  ``probe`` (repeat, train, test)
    is an instrumentation hook for protocol audits.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    hyper = dict(hyper or {})

    def one(r: int) -> dict:
        try:
            return _evaluate_once(
                matrix,
                learner,
                hyper,
                split_seed=child_seed(seed, r, 0),
                balance_seed=child_seed(seed, r, 1),
                train_seed=child_seed(seed, r, 2),
                test_fraction=test_fraction,
                probe=probe,
                repeat_index=r,
            )
        except ValueError as exc:
            raise type(exc)(f"repeat {r}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(repeats)))
    else:
        records = [one(r) for r in range(repeats)]
    return _aggregate(records, ensembles.KIND_ALIASES.get(learner, learner), course_id)


def cross_validate(
    matrix: FeatureMatrix,
    learner: str,
    hyper: Optional[dict] = None,
    k: int = 10,
    seed: int = 0,
    threads: int = 1,
    course_id: str = "",
    probe: Optional[Callable] = None,
) -> EvalReport:
    """Stratified k-fold protocol; training folds are balanced, held-out
    folds are evaluated untouched.  Aggregation matches repeated_holdout
    with repeats = k."""
    hyper = dict(hyper or {})
    folds = kfold_indices(matrix, k=k, seed=seed)

    def one(f: int) -> dict:
        train_idx, val_idx = folds[f]
        balanced = oversample(matrix.subset(train_idx), seed=child_seed(seed, f, 1))
        if probe is not None:
            probe(f, balanced, matrix.subset(val_idx))
        model = ensembles.train(balanced, learner, seed=child_seed(seed, f, 2), **hyper)
        predicted = ensembles.predict_classes(model, matrix.X[val_idx])
        return _metrics_record(matrix.y[val_idx], predicted)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(k)))
    else:
        records = [one(f) for f in range(k)]
    return _aggregate(records, ensembles.KIND_ALIASES.get(learner, learner), course_id)


_LEARNER_TITLES = {
    "random_forest": "Random Forest",
    "gradient_boosting": "Gradient Boosting",
    "adaboost": "AdaBoost",
    "second_order_boosting": "XGBoost-style",
}

_TABLE_COLUMNS = [
    ("Accuracy", "accuracy"),
    ("Prec 0", "precision_0"),
    ("Prec 1", "precision_1"),
    ("Recall 0", "recall_0"),
    ("Recall 1", "recall_1"),
    ("F1 0", "f1_0"),
    ("F1 1", "f1_1"),
]


def format_report_table(reports: list) -> str:
    """Plain-text table: one learner per row, percent metrics with [+-]
    margins after each column."""
    header = ["Learner".ljust(20)]
    for title, _ in _TABLE_COLUMNS:
        header.append(title.rjust(9))
        header.append("[+-]".rjust(6))
    lines = []
    if reports and reports[0].course_id:
        lines.append(f"Course: {reports[0].course_id}  (repeats: {reports[0].repeats})")
    lines.append("".join(header))
    for rep in reports:
        row = [_LEARNER_TITLES.get(rep.learner, rep.learner).ljust(20)]
        for _, key in _TABLE_COLUMNS:
            row.append(f"{100 * rep.means[key]:9.2f}")
            row.append(f"{100 * rep.margins[key]:6.2f}")
        lines.append("".join(row))
    return "\n".join(lines) + "\n"
