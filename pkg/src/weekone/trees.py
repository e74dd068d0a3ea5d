"""CART-style binary decision trees.

Gini-impurity classification trees and squared-error regression trees with
midpoint thresholds, deterministic tie-breaking, and impurity-decrease
feature importance.  These are the base learners for every ensemble in
:mod:`weekone.ensembles`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"

DEFAULT_CLASSIFICATION_DEPTH = 12
DEFAULT_REGRESSION_DEPTH = 3
DEFAULT_MIN_SAMPLES_LEAF = 5

# Split candidates whose decrease lies within this slack of the best are
# treated as exact ties and resolved by (feature_index, threshold).
TIE_TOL = 1e-12


@dataclass(frozen=True)
class SplitCandidate:
    """A (feature, threshold) pair with its weighted impurity decrease."""

    feature_index: int
    threshold: float
    impurity_decrease: float


@dataclass
class TreeNode:
    """Internal node (split, left, right) or leaf (value).

    Leaf ``value`` is a ``(p0, p1)`` probability pair for classification
    trees and a float for regression trees.  ``sample_count`` is the number
    of training samples routed through the node.
    """

    sample_count: int
    split: Optional[SplitCandidate] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    value: object = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None


@dataclass
class DecisionTree:
    root: TreeNode
    kind: str
    feature_count: int
    max_depth: int
    min_samples_leaf: int


def gini_impurity(class_counts: Sequence[float]) -> float:
    """Binary Gini impurity 1 - sum((n_c / n)^2), in [0, 0.5]."""
    a, b = class_counts
    if a < 0 or b < 0:
        raise ValueError("class counts must be nonnegative")
    n = a + b
    if n == 0:
        raise ValueError("Gini impurity is undefined for an empty node")
    return 1.0 - (a * a + b * b) / (n * n)


def _feature_best_classification(x, y, w, min_samples_leaf):
    """Best (decrease, threshold) over midpoints of one feature, or None."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    if xs[0] == xs[-1]:
        return None
    n = xs.size
    ws = w[order]
    cw = np.cumsum(ws)
    cw1 = np.cumsum(ws * y[order])
    total_w = cw[-1]
    total_w1 = cw1[-1]
    total_w0 = total_w - total_w1

    left_n = np.arange(1, n)
    valid = (xs[1:] > xs[:-1]) & (left_n >= min_samples_leaf) & (n - left_n >= min_samples_leaf)
    if not valid.any():
        return None

    wl = cw[:-1]
    w1l = cw1[:-1]
    wr = total_w - wl
    w1r = total_w1 - w1l
    w0l = wl - w1l
    w0r = wr - w1r
    with np.errstate(divide="ignore", invalid="ignore"):
        gini_l = 1.0 - (w0l * w0l + w1l * w1l) / (wl * wl)
        gini_r = 1.0 - (w0r * w0r + w1r * w1r) / (wr * wr)
        parent = 1.0 - (total_w0 * total_w0 + total_w1 * total_w1) / (total_w * total_w)
        decrease = parent - (wl / total_w) * gini_l - (wr / total_w) * gini_r
    decrease[~valid] = -np.inf
    decrease[~np.isfinite(decrease)] = -np.inf
    best = decrease.max()
    if best <= 0.0:
        return None
    pos = int(np.nonzero(decrease >= best - TIE_TOL)[0][0])
    threshold = 0.5 * (xs[pos] + xs[pos + 1])
    return float(decrease[pos]), float(threshold)


def _feature_best_regression(x, y, min_samples_leaf):
    order = np.argsort(x, kind="stable")
    xs = x[order]
    if xs[0] == xs[-1]:
        return None
    n = xs.size
    ys = y[order]
    cs = np.cumsum(ys)
    cs2 = np.cumsum(ys * ys)
    total = cs[-1]
    total2 = cs2[-1]

    left_n = np.arange(1, n)
    valid = (xs[1:] > xs[:-1]) & (left_n >= min_samples_leaf) & (n - left_n >= min_samples_leaf)
    if not valid.any():
        return None

    nl = left_n.astype(float)
    nr = n - nl
    sl = cs[:-1]
    sr = total - sl
    var_l = cs2[:-1] / nl - (sl / nl) ** 2
    var_r = (total2 - cs2[:-1]) / nr - (sr / nr) ** 2
    parent = total2 / n - (total / n) ** 2
    decrease = parent - (nl / n) * var_l - (nr / n) * var_r
    decrease[~valid] = -np.inf
    best = decrease.max()
    if best <= 0.0:
        return None
    pos = int(np.nonzero(decrease >= best - TIE_TOL)[0][0])
    threshold = 0.5 * (xs[pos] + xs[pos + 1])
    return float(decrease[pos]), float(threshold)


def best_split(
    rows,
    targets,
    kind: str = CLASSIFICATION,
    *,
    min_samples_leaf: int = 1,
    sample_weight=None,
    feature_indices=None,
) -> Optional[SplitCandidate]:
    """Exhaustive search for the impurity-maximizing midpoint split.

    Thresholds are midpoints between adjacent distinct sorted values; rows
    route left on ``value <= threshold``.  Ties on decrease are broken by
    lowest feature index, then lowest threshold.  Returns None when no
    split strictly decreases impurity or every split would leave a child
    with fewer than ``min_samples_leaf`` samples.
    """
    X = np.asarray(rows, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2:
        raise ValueError("rows must be a 2-D matrix")
    if X.shape[0] != y.shape[0]:
        raise ValueError("targets are not aligned with rows")
    if X.shape[0] < 2:
        return None
    if y.min() == y.max():
        return None

    if kind == CLASSIFICATION:
        w = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, float)
    elif kind == REGRESSION:
        w = None
    else:
        raise ValueError(f"unknown tree kind: {kind!r}")

    if feature_indices is None:
        feature_indices = range(X.shape[1])

    best = None  # (decrease, feature, threshold)
    for f in sorted(int(f) for f in feature_indices):
        col = np.ascontiguousarray(X[:, f])
        if kind == CLASSIFICATION:
            found = _feature_best_classification(col, y, w, min_samples_leaf)
        else:
            found = _feature_best_regression(col, y, min_samples_leaf)
        if found is None:
            continue
        dec, thr = found
        if best is None or dec > best[0] + TIE_TOL:
            best = (dec, f, thr)
    if best is None:
        return None
    return SplitCandidate(feature_index=best[1], threshold=best[2], impurity_decrease=best[0])


def _leaf(y, w, kind, n):
    if kind == CLASSIFICATION:
        total = w.sum()
        w1 = float(w[y == 1.0].sum())
        p1 = w1 / total if total > 0 else 0.5
        return TreeNode(sample_count=n, value=(1.0 - p1, p1))
    return TreeNode(sample_count=n, value=float(y.mean()))


def _grow(X, y, w, idx, depth, kind, max_depth, min_samples_leaf, mtry, rng, leaves):
    n = X.shape[0]
    candidate = None
    if depth < max_depth and n >= 2 * min_samples_leaf and y.min() != y.max():
        if mtry is not None and mtry < X.shape[1]:
            feats = np.sort(rng.choice(X.shape[1], size=mtry, replace=False))
        else:
            feats = None
        candidate = best_split(
            X,
            y,
            kind,
            min_samples_leaf=min_samples_leaf,
            sample_weight=w if kind == CLASSIFICATION else None,
            feature_indices=feats,
        )
    if candidate is None:
        node = _leaf(y, w if w is not None else np.ones(n), kind, n)
        if leaves is not None:
            leaves.append((node, idx))
        return node

    mask = X[:, candidate.feature_index] <= candidate.threshold
    left = _grow(
        X[mask], y[mask], None if w is None else w[mask], None if idx is None else idx[mask],
        depth + 1, kind, max_depth, min_samples_leaf, mtry, rng, leaves,
    )
    right = _grow(
        X[~mask], y[~mask], None if w is None else w[~mask], None if idx is None else idx[~mask],
        depth + 1, kind, max_depth, min_samples_leaf, mtry, rng, leaves,
    )
    return TreeNode(sample_count=n, split=candidate, left=left, right=right)


def grow_tree(
    rows,
    targets,
    kind: str = CLASSIFICATION,
    *,
    max_depth: Optional[int] = None,
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF,
    mtry: Optional[int] = None,
    rng_seed=None,
    sample_weight=None,
    _leaf_rows: Optional[list] = None,
) -> DecisionTree:
    """Grow a tree by recursive best_split until depth/purity/leaf-size stops.

    ``mtry`` enables per-node feature subsampling (for forests) driven by
    ``rng_seed`` (an int or a numpy Generator).  ``_leaf_rows``, when a
    list, collects (leaf, training-row-indices) pairs; boosting uses it to
    rewrite leaf values.
    """
    X = np.asarray(rows, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("rows must be a nonempty 2-D matrix")
    if y.shape[0] != X.shape[0]:
        raise ValueError("targets are not aligned with rows")
    if max_depth is None:
        max_depth = DEFAULT_CLASSIFICATION_DEPTH if kind == CLASSIFICATION else DEFAULT_REGRESSION_DEPTH
    if kind == CLASSIFICATION:
        w = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, float)
    else:
        w = None
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    idx = np.arange(X.shape[0]) if _leaf_rows is not None else None

    root = _grow(X, y, w, idx, 0, kind, max_depth, min_samples_leaf, mtry, rng, _leaf_rows)
    return DecisionTree(
        root=root,
        kind=kind,
        feature_count=X.shape[1],
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
    )


def predict_tree(tree: DecisionTree, row):
    """Route one row to its leaf; left on ``value <= threshold``."""
    r = np.asarray(row, dtype=float).ravel()
    if r.size != tree.feature_count:
        raise ValueError(f"row has {r.size} features, tree expects {tree.feature_count}")
    node = tree.root
    while not node.is_leaf:
        node = node.left if r[node.split.feature_index] <= node.split.threshold else node.right
    return node.value


def _apply(node, X, idx, out):
    if node.is_leaf:
        out[idx] = node.value
        return
    go_left = X[idx, node.split.feature_index] <= node.split.threshold
    _apply(node.left, X, idx[go_left], out)
    _apply(node.right, X, idx[~go_left], out)


def predict_tree_many(tree: DecisionTree, rows) -> np.ndarray:
    """Vectorized predict: (n, 2) probabilities or (n,) regression values."""
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[1] != tree.feature_count:
        raise ValueError(f"rows must be 2-D with {tree.feature_count} columns")
    n = X.shape[0]
    out = np.empty((n, 2)) if tree.kind == CLASSIFICATION else np.empty(n)
    _apply(tree.root, X, np.arange(n), out)
    return out


def tree_feature_importance(tree: DecisionTree) -> np.ndarray:
    """Impurity-decrease importance, normalized to sum to 1 when nonzero.

    importance[f] = sum over internal nodes splitting on f of
    (node sample fraction) * (weighted impurity decrease at the node).
    """
    imp = np.zeros(tree.feature_count)
    total = tree.root.sample_count

    def walk(node):
        if node.is_leaf:
            return
        imp[node.split.feature_index] += (node.sample_count / total) * node.split.impurity_decrease
        walk(node.left)
        walk(node.right)

    walk(tree.root)
    s = imp.sum()
    if s > 0:
        imp /= s
    return imp


def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        value = list(node.value) if isinstance(node.value, tuple) else node.value
        return {"n": node.sample_count, "value": value}
    return {
        "n": node.sample_count,
        "feature": node.split.feature_index,
        "threshold": node.split.threshold,
        "decrease": node.split.impurity_decrease,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(data: dict) -> TreeNode:
    if "feature" in data:
        return TreeNode(
            sample_count=data["n"],
            split=SplitCandidate(data["feature"], data["threshold"], data["decrease"]),
            left=_node_from_dict(data["left"]),
            right=_node_from_dict(data["right"]),
        )
    value = data["value"]
    if isinstance(value, list):
        value = tuple(value)
    return TreeNode(sample_count=data["n"], value=value)


def tree_to_dict(tree: DecisionTree) -> dict:
    return {
        "kind": tree.kind,
        "feature_count": tree.feature_count,
        "max_depth": tree.max_depth,
        "min_samples_leaf": tree.min_samples_leaf,
        "root": _node_to_dict(tree.root),
    }


def tree_from_dict(data: dict) -> DecisionTree:
    return DecisionTree(
        root=_node_from_dict(data["root"]),
        kind=data["kind"],
        feature_count=data["feature_count"],
        max_depth=data["max_depth"],
        min_samples_leaf=data["min_samples_leaf"],
    )
