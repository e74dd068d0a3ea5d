"""Independent brute-force oracles the unit tests check the library against.

These deliberately re-derive results by enumeration rather than reusing any
library code path: the split oracle walks every (feature, midpoint)
candidate, and the rank-sum oracle walks every group assignment.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

TIE_TOL = 1e-12


def _gini(c0: float, c1: float) -> float:
    n = c0 + c1
    return 1.0 - (c0 * c0 + c1 * c1) / (n * n)


def _variance(values) -> float:
    n = len(values)
    s = sum(values)
    s2 = sum(v * v for v in values)
    return s2 / n - (s / n) ** 2


def exhaustive_best_split(X, y, kind="classification", min_samples_leaf=1):
    """Enumerate every midpoint split; return (feature, threshold, decrease).

    Ties within TIE_TOL of the maximum decrease resolve to the smallest
    (feature, threshold).  Returns None when no candidate strictly
    decreases impurity.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    candidates = []
    for f in range(d):
        levels = sorted(set(X[:, f].tolist()))
        for lo, hi in zip(levels, levels[1:]):
            thr = 0.5 * (lo + hi)
            left = X[:, f] <= thr
            nl, nr = int(left.sum()), int((~left).sum())
            if nl < min_samples_leaf or nr < min_samples_leaf:
                continue
            if kind == "classification":
                parent = _gini(float((y == 0).sum()), float((y == 1).sum()))
                gl = _gini(float((y[left] == 0).sum()), float((y[left] == 1).sum()))
                gr = _gini(float((y[~left] == 0).sum()), float((y[~left] == 1).sum()))
                dec = parent - (nl / n) * gl - (nr / n) * gr
            else:
                parent = _variance(y.tolist())
                dec = parent - (nl / n) * _variance(y[left].tolist()) - (nr / n) * _variance(y[~left].tolist())
            candidates.append((f, thr, dec))
    if not candidates:
        return None
    best = max(dec for _, _, dec in candidates)
    if best <= 0.0:
        return None
    ties = [(f, thr, dec) for f, thr, dec in candidates if dec >= best - TIE_TOL]
    f, thr, dec = min(ties, key=lambda c: (c[0], c[1]))
    return f, thr, dec


def enumerate_rank_sum_p(a, b) -> tuple:
    """Exact two-sided rank-sum p by enumerating every group-a assignment.

    Assumes tie-free samples.  Returns (U, p).
    """
    a = list(a)
    b = list(b)
    n_a, n_b = len(a), len(b)
    combined = sorted(a + b)
    rank_of = {v: i + 1 for i, v in enumerate(combined)}
    u_obs = sum(rank_of[v] for v in a) - n_a * (n_a + 1) / 2.0

    us = []
    for subset in combinations(range(1, n_a + n_b + 1), n_a):
        us.append(sum(subset) - n_a * (n_a + 1) / 2.0)
    us = np.asarray(us)
    cdf = float((us <= u_obs).sum()) / us.size
    sf = float((us >= u_obs).sum()) / us.size
    return u_obs, min(1.0, 2.0 * min(cdf, sf))
