"""Tree ensembles: random forest, gradient boosting, AdaBoost, and
regularized second-order boosting, with ensemble-level Gini importance.

All four learners share the CART base trees from :mod:`weekone.trees`.
Training is deterministic under a fixed seed regardless of worker count:
every stochastic component draws from a stream derived from
(seed, tree-or-round index).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cohort import FeatureMatrix
from .errors import TrainingError
from .rng import derive_rng
from . import trees
from .trees import DecisionTree, SplitCandidate, TreeNode

RANDOM_FOREST = "random_forest"
GRADIENT_BOOSTING = "gradient_boosting"
ADABOOST = "adaboost"
SECOND_ORDER_BOOSTING = "second_order_boosting"

LEARNER_KINDS = (RANDOM_FOREST, GRADIENT_BOOSTING, ADABOOST, SECOND_ORDER_BOOSTING)

# CLI/report aliases, after the systems the learners reproduce.
KIND_ALIASES = {"rf": RANDOM_FOREST, "gb": GRADIENT_BOOSTING, "ada": ADABOOST, "xgb": SECOND_ORDER_BOOSTING}


@dataclass
class EnsembleModel:
    """A fitted ensemble: trees, per-tree weights, and importances.

    ``base_score`` is the initial log-odds for the boosting variants and 0
    otherwise.  ``tree_weights`` hold AdaBoost's alphas, the shrinkage for
    boosting rounds, and uniform 1s for a forest.
    """

    kind: str
    trees: list
    tree_weights: list
    base_score: float
    hyperparameters: dict
    feature_importances: np.ndarray
    feature_names: list = field(default_factory=list)

    @property
    def feature_count(self) -> int:
        return len(self.feature_names)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


def _check_trainable(matrix: FeatureMatrix) -> tuple:
    X = np.asarray(matrix.X, dtype=float)
    y = np.asarray(matrix.y, dtype=float)
    if X.shape[0] == 0:
        raise TrainingError("cannot train on an empty matrix")
    if y.min() == y.max():
        raise TrainingError("training data must contain both classes")
    return X, y


def _mean_importance(tree_list) -> np.ndarray:
    per_tree = np.array([trees.tree_feature_importance(t) for t in tree_list])
    mean = per_tree.mean(axis=0)
    s = mean.sum()
    return mean / s if s > 0 else mean


def train_random_forest(
    matrix: FeatureMatrix,
    n_trees: int = 100,
    mtry: Optional[int] = None,
    max_depth: int = trees.DEFAULT_CLASSIFICATION_DEPTH,
    min_samples_leaf: int = trees.DEFAULT_MIN_SAMPLES_LEAF,
    seed: int = 0,
    bootstrap: bool = True,
    threads: int = 1,
) -> EnsembleModel:
    """Bagged classification trees with per-node feature subsampling.

    Each tree is grown on a bootstrap sample (n draws with replacement)
    using its own RNG stream derived from (seed, tree index), so results do
    not depend on how many threads run the fit.  ``bootstrap=False`` is a
    test hook that makes a 1-tree forest equal a single grown tree.
    """
    X, y = _check_trainable(matrix)
    if n_trees < 1:
        raise TrainingError("n_trees must be >= 1")
    n, d = X.shape
    if mtry is None:
        mtry = max(1, int(np.sqrt(d)))

    def fit_one(t: int) -> DecisionTree:
        rng = derive_rng(seed, t)
        if bootstrap:
            idx = rng.integers(0, n, size=n)
            Xb, yb = X[idx], y[idx]
        else:
            Xb, yb = X, y
        return trees.grow_tree(
            Xb, yb, trees.CLASSIFICATION,
            max_depth=max_depth, min_samples_leaf=min_samples_leaf, mtry=mtry, rng_seed=rng,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = list(pool.map(fit_one, range(n_trees)))
    else:
        fitted = [fit_one(t) for t in range(n_trees)]

    return EnsembleModel(
        kind=RANDOM_FOREST,
        trees=fitted,
        tree_weights=[1.0] * n_trees,
        base_score=0.0,
        hyperparameters={
            "n_trees": n_trees,
            "mtry": mtry,
            "max_depth": max_depth,
            "min_samples_leaf": min_samples_leaf,
            "seed": seed,
            "bootstrap": bootstrap,
        },
        feature_importances=_mean_importance(fitted),
        feature_names=list(matrix.columns),
    )


def _base_log_odds(y: np.ndarray) -> float:
    p = float(y.mean())
    return float(np.log(p / (1.0 - p)))


def train_gradient_boosting(
    matrix: FeatureMatrix,
    n_rounds: int = 100,
    learning_rate: float = 0.1,
    max_depth: int = trees.DEFAULT_REGRESSION_DEPTH,
    min_samples_leaf: int = trees.DEFAULT_MIN_SAMPLES_LEAF,
    seed: int = 0,
) -> EnsembleModel:
    """Stagewise regression trees on the binomial-deviance negative gradient.

    F starts at the log-odds of the positive rate; each round fits a
    squared-error tree to the residuals y - p and rewrites every leaf with
    the Newton step sum(r) / sum(p(1-p)) over its training samples.
    """
    X, y = _check_trainable(matrix)
    if not 0.0 < learning_rate <= 1.0:
        raise TrainingError("learning_rate must lie in (0, 1]")
    if n_rounds < 0:
        raise TrainingError("n_rounds must be >= 0")

    base = _base_log_odds(y)
    scores = np.full(X.shape[0], base)
    fitted = []
    for _ in range(n_rounds):
        p = _sigmoid(scores)
        residual = y - p
        hessian = p * (1.0 - p)
        leaf_rows: list = []
        tree = trees.grow_tree(
            X, residual, trees.REGRESSION,
            max_depth=max_depth, min_samples_leaf=min_samples_leaf, _leaf_rows=leaf_rows,
        )
        for leaf, idx in leaf_rows:
            denom = float(hessian[idx].sum())
            leaf.value = float(residual[idx].sum()) / denom if denom > 0 else 0.0
        scores += learning_rate * trees.predict_tree_many(tree, X)
        fitted.append(tree)

    return EnsembleModel(
        kind=GRADIENT_BOOSTING,
        trees=fitted,
        tree_weights=[learning_rate] * len(fitted),
        base_score=base,
        hyperparameters={
            "n_rounds": n_rounds,
            "learning_rate": learning_rate,
            "max_depth": max_depth,
            "min_samples_leaf": min_samples_leaf,
            "seed": seed,
        },
        feature_importances=_mean_importance(fitted) if fitted else np.zeros(X.shape[1]),
        feature_names=list(matrix.columns),
    )


def train_adaboost(
    matrix: FeatureMatrix,
    n_rounds: int = 100,
    max_depth: int = 1,
    min_samples_leaf: int = trees.DEFAULT_MIN_SAMPLES_LEAF,
    seed: int = 0,
    _trace: Optional[list] = None,
) -> EnsembleModel:
    """SAMME at K = 2: reweighted classification trees with log-odds alphas.

    Sample weights start uniform; each round grows a tree under the current
    weights (weighted Gini), upweights its misclassified samples by
    e^alpha with alpha = ln((1 - eps)/eps), and renormalizes.  The round
    loop stops early on eps >= 0.5 or a perfect tree (eps = 0).
    ``_trace``, when a list, collects per-round (eps, alpha, weights, miss)
    snapshots for protocol tests.
    """
    X, y = _check_trainable(matrix)
    if n_rounds < 1:
        raise TrainingError("n_rounds must be >= 1")
    n = X.shape[0]
    weights = np.full(n, 1.0 / n)
    fitted, alphas = [], []
    for _ in range(n_rounds):
        tree = trees.grow_tree(
            X, y, trees.CLASSIFICATION,
            max_depth=max_depth, min_samples_leaf=min_samples_leaf, sample_weight=weights,
        )
        proba = trees.predict_tree_many(tree, X)
        predicted = (proba[:, 1] > proba[:, 0]).astype(float)
        miss = predicted != y
        eps = float(weights[miss].sum())
        if eps == 0.0:
            fitted.append(tree)
            alphas.append(1.0)
            break
        if eps >= 0.5:
            if not fitted:
                fitted.append(tree)
                alphas.append(0.0)
            break
        alpha = float(np.log((1.0 - eps) / eps))
        fitted.append(tree)
        alphas.append(alpha)
        weights[miss] *= np.exp(alpha)
        weights /= weights.sum()
        if _trace is not None:
            _trace.append({"eps": eps, "alpha": alpha, "weights": weights.copy(), "miss": miss.copy()})

    return EnsembleModel(
        kind=ADABOOST,
        trees=fitted,
        tree_weights=alphas,
        base_score=0.0,
        hyperparameters={
            "n_rounds": n_rounds,
            "max_depth": max_depth,
            "min_samples_leaf": min_samples_leaf,
            "seed": seed,
        },
        feature_importances=_mean_importance(fitted),
        feature_names=list(matrix.columns),
    )


def _feature_best_gain(x, g, h, lam, gamma, min_samples_leaf):
    order = np.argsort(x, kind="stable")
    xs = x[order]
    if xs[0] == xs[-1]:
        return None
    n = xs.size
    cg = np.cumsum(g[order])
    ch = np.cumsum(h[order])
    G, H = cg[-1], ch[-1]

    left_n = np.arange(1, n)
    valid = (xs[1:] > xs[:-1]) & (left_n >= min_samples_leaf) & (n - left_n >= min_samples_leaf)
    if not valid.any():
        return None
    gl, hl = cg[:-1], ch[:-1]
    gr, hr = G - gl, H - hl
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - G * G / (H + lam)) - gamma
    gain[~valid] = -np.inf
    gain[~np.isfinite(gain)] = -np.inf
    best = gain.max()
    if best <= 0.0:
        return None
    pos = int(np.nonzero(gain >= best - trees.TIE_TOL)[0][0])
    return float(gain[pos]), 0.5 * float(xs[pos] + xs[pos + 1])


def _grow_gain_node(X, g, h, depth, max_depth, min_samples_leaf, lam, gamma):
    n = X.shape[0]
    best = None  # (gain, feature, threshold)
    if depth < max_depth and n >= 2 * min_samples_leaf:
        for f in range(X.shape[1]):
            found = _feature_best_gain(np.ascontiguousarray(X[:, f]), g, h, lam, gamma, min_samples_leaf)
            if found is None:
                continue
            gain, thr = found
            if best is None or gain > best[0] + trees.TIE_TOL:
                best = (gain, f, thr)
    if best is None:
        denom = float(h.sum()) + lam
        weight = -float(g.sum()) / denom if denom > 0 else 0.0
        return TreeNode(sample_count=n, value=weight)
    gain, f, thr = best
    mask = X[:, f] <= thr
    return TreeNode(
        sample_count=n,
        split=SplitCandidate(feature_index=f, threshold=thr, impurity_decrease=gain),
        left=_grow_gain_node(X[mask], g[mask], h[mask], depth + 1, max_depth, min_samples_leaf, lam, gamma),
        right=_grow_gain_node(X[~mask], g[~mask], h[~mask], depth + 1, max_depth, min_samples_leaf, lam, gamma),
    )


def train_second_order_boosting(
    matrix: FeatureMatrix,
    n_rounds: int = 100,
    learning_rate: float = 0.1,
    lam: float = 1.0,
    gamma: float = 0.0,
    max_depth: int = trees.DEFAULT_REGRESSION_DEPTH,
    min_samples_leaf: int = trees.DEFAULT_MIN_SAMPLES_LEAF,
    seed: int = 0,
) -> EnsembleModel:
    """Regularized second-order boosting on the logistic objective.

    With g = p - y and h = p(1 - p), each round grows a tree maximizing the
    split gain 0.5 * [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)] -
    gamma (splits with nonpositive gain are rejected) and assigns leaf
    weights w = -G/(H+lam); F moves by learning_rate * w.
    """
    X, y = _check_trainable(matrix)
    if lam < 0 or gamma < 0:
        raise TrainingError("lam and gamma must be nonnegative")
    if not 0.0 < learning_rate <= 1.0:
        raise TrainingError("learning_rate must lie in (0, 1]")
    if n_rounds < 0:
        raise TrainingError("n_rounds must be >= 0")

    base = _base_log_odds(y)
    scores = np.full(X.shape[0], base)
    fitted = []
    for _ in range(n_rounds):
        p = _sigmoid(scores)
        g = p - y
        h = p * (1.0 - p)
        root = _grow_gain_node(X, g, h, 0, max_depth, min_samples_leaf, lam, gamma)
        tree = DecisionTree(
            root=root,
            kind=trees.REGRESSION,
            feature_count=X.shape[1],
            max_depth=max_depth,
            min_samples_leaf=min_samples_leaf,
        )
        scores += learning_rate * trees.predict_tree_many(tree, X)
        fitted.append(tree)

    return EnsembleModel(
        kind=SECOND_ORDER_BOOSTING,
        trees=fitted,
        tree_weights=[learning_rate] * len(fitted),
        base_score=base,
        hyperparameters={
            "n_rounds": n_rounds,
            "learning_rate": learning_rate,
            "lam": lam,
            "gamma": gamma,
            "max_depth": max_depth,
            "min_samples_leaf": min_samples_leaf,
            "seed": seed,
        },
        feature_importances=_mean_importance(fitted) if fitted else np.zeros(X.shape[1]),
        feature_names=list(matrix.columns),
    )


def decision_scores(model: EnsembleModel, rows, n_trees: Optional[int] = None) -> np.ndarray:
    """Additive scores for the boosting kinds: base + sum of weighted trees.

    ``n_trees`` truncates the ensemble (staged predictions for diagnostics).
    """
    X = np.asarray(rows, dtype=float)
    use = model.trees if n_trees is None else model.trees[:n_trees]
    weights = model.tree_weights if n_trees is None else model.tree_weights[:n_trees]
    scores = np.full(X.shape[0], model.base_score)
    for tree, w in zip(use, weights):
        scores += w * trees.predict_tree_many(tree, X)
    return scores


# Probabilities stay inside the open interval (0, 1): averaged pure leaves
# and saturated sigmoids are clamped by this epsilon.
_PROB_EPS = 1e-12


def predict_proba_many(model: EnsembleModel, rows) -> np.ndarray:
    """(n, 2) class probabilities for every learner kind."""
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.feature_count:
        raise ValueError(f"rows must be 2-D with {model.feature_count} columns")
    if model.kind == RANDOM_FOREST:
        acc = np.zeros((X.shape[0], 2))
        for tree in model.trees:
            acc += trees.predict_tree_many(tree, X)
        p1 = acc[:, 1] / len(model.trees)
    elif model.kind in (GRADIENT_BOOSTING, SECOND_ORDER_BOOSTING):
        p1 = _sigmoid(decision_scores(model, X))
    elif model.kind == ADABOOST:
        total = float(sum(model.tree_weights))
        margin = np.zeros(X.shape[0])
        if total > 0:
            for tree, alpha in zip(model.trees, model.tree_weights):
                proba = trees.predict_tree_many(tree, X)
                votes = np.where(proba[:, 1] > proba[:, 0], 1.0, -1.0)
                margin += alpha * votes
            margin /= total
        p1 = _sigmoid(margin)
    else:
        raise ValueError(f"unknown ensemble kind: {model.kind!r}")
    p1 = np.clip(p1, _PROB_EPS, 1.0 - _PROB_EPS)
    return np.column_stack([1.0 - p1, p1])


def predict_proba(model: EnsembleModel, row) -> tuple:
    """Probability pair (p0, p1) for one row; p0 + p1 = 1."""
    pair = predict_proba_many(model, np.asarray(row, dtype=float).reshape(1, -1))[0]
    return float(pair[0]), float(pair[1])


def predict_classes(model: EnsembleModel, rows) -> np.ndarray:
    """Argmax classes at threshold 0.5; ties go to class 0."""
    proba = predict_proba_many(model, rows)
    return (proba[:, 1] > proba[:, 0]).astype(int)


def ensemble_gini_importance(model: EnsembleModel) -> dict:
    """Column-named importances (mean per-tree, renormalized to sum to 1)."""
    names = model.feature_names or [f"feature_{i}" for i in range(model.feature_count)]
    return {name: float(v) for name, v in zip(names, model.feature_importances)}


def model_to_dict(model: EnsembleModel) -> dict:
    return {
        "kind": model.kind,
        "base_score": model.base_score,
        "tree_weights": [float(w) for w in model.tree_weights],
        "hyperparameters": model.hyperparameters,
        "feature_importances": [float(v) for v in model.feature_importances],
        "feature_names": list(model.feature_names),
        "trees": [trees.tree_to_dict(t) for t in model.trees],
    }


def model_from_dict(data: dict) -> EnsembleModel:
    return EnsembleModel(
        kind=data["kind"],
        trees=[trees.tree_from_dict(t) for t in data["trees"]],
        tree_weights=list(data["tree_weights"]),
        base_score=data["base_score"],
        hyperparameters=dict(data["hyperparameters"]),
        feature_importances=np.asarray(data["feature_importances"], dtype=float),
        feature_names=list(data["feature_names"]),
    )


def save_model(model: EnsembleModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> EnsembleModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def train(matrix: FeatureMatrix, kind: str, seed: int = 0, threads: int = 1, **hyper) -> EnsembleModel:
    """Dispatch to a learner by kind name or CLI alias."""
    kind = KIND_ALIASES.get(kind, kind)
    if kind == RANDOM_FOREST:
        return train_random_forest(matrix, seed=seed, threads=threads, **hyper)
    if kind == GRADIENT_BOOSTING:
        return train_gradient_boosting(matrix, seed=seed, **hyper)
    if kind == ADABOOST:
        return train_adaboost(matrix, seed=seed, **hyper)
    if kind == SECOND_ORDER_BOOSTING:
        return train_second_order_boosting(matrix, seed=seed, **hyper)
    raise ValueError(f"unknown learner kind: {kind!r}")
