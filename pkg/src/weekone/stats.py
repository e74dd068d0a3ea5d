"""Normality and group-difference testing for completer time-spent analysis.

Shapiro-Wilk follows the Royston AS R94 approximation (Blom-type
order-statistic expectations with polynomial small-sample corrections and a
normal approximation of ln(1 - W) for the p-value).  The group-difference
test is the Mann-Whitney rank-sum form: exact enumeration of the U null
distribution for small tie-free samples, tie-corrected normal approximation
with continuity correction otherwise.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .cohort import CourseSpec, derive_time_spent, DEFAULT_DURATION_CAP
from .rng import derive_rng

COMPLETER = "completer"
NON_COMPLETER = "non-completer"

EXACT = "exact"
NORMAL_APPROX = "normal-approx"

SHAPIRO_MAX_N = 5000
_EXACT_LIMIT = 20

_STD_NORMAL = NormalDist()


def _normal_sf(z: float) -> float:
    """Upper-tail probability with full precision far into the tail."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))

# Royston (1995) AS R94 polynomial coefficients, highest order first.
_C1 = (-2.706056, 4.434685, -2.07119, -0.147981, 0.221157, 0.0)
_C2 = (-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0)
_C3 = (-0.0006714, 0.025054, -0.39978, 0.544)
_C4 = (-0.0020322, 0.062767, -0.77857, 1.3822)
_C5 = (0.0038915, -0.083751, -0.31082, -1.5861)
_C6 = (0.0030302, -0.082676, -0.4803)
_G = (0.459, -2.273)
_PI6 = 1.90985931710274  # 6/pi
_STQR = 1.04719755119660  # asin(sqrt(3/4))


@dataclass(frozen=True)
class GroupSample:
    """Values (seconds) for one learner group."""

    group: str
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ValueError("a group sample must be nonempty")
        if not all(np.isfinite(v) for v in self.values):
            raise ValueError("group values must be finite")


def _shapiro_weights(n: int) -> np.ndarray:
    """Full antisymmetric coefficient vector for the W statistic."""
    if n == 3:
        mags = np.array([np.sqrt(0.5)])
    else:
        half = n // 2
        m = np.array([_STD_NORMAL.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, half + 1)])
        summ2 = 2.0 * float(np.square(m).sum())
        ssumm2 = np.sqrt(summ2)
        rsn = 1.0 / np.sqrt(n)
        a1 = np.polyval(_C1, rsn) - m[0] / ssumm2
        if n > 5:
            a2 = np.polyval(_C2, rsn) - m[1] / ssumm2
            fac = np.sqrt((summ2 - 2.0 * m[0] ** 2 - 2.0 * m[1] ** 2) / (1.0 - 2.0 * a1**2 - 2.0 * a2**2))
            mags = np.concatenate([[a1, a2], -m[2:] / fac])
        else:
            fac = np.sqrt((summ2 - 2.0 * m[0] ** 2) / (1.0 - 2.0 * a1**2))
            mags = np.concatenate([[a1], -m[1:] / fac])
    weights = np.zeros(n)
    half = mags.size
    weights[:half] = -mags
    weights[n - half:] = mags[::-1]
    return weights


def shapiro_wilk(values: Sequence[float], subsample_seed: int = 0) -> tuple:
    """Shapiro-Wilk (W, p) for 3 <= n; subsamples to 5000 above that size.

    Raises ValueError for n < 3 or a zero-range (constant) sample.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if n < 3:
        raise ValueError("Shapiro-Wilk needs at least 3 observations")
    if n > SHAPIRO_MAX_N:
        rng = derive_rng(subsample_seed)
        x = np.sort(rng.choice(x, size=SHAPIRO_MAX_N, replace=False))
        n = SHAPIRO_MAX_N
    if x[-1] - x[0] <= 0.0:
        raise ValueError("Shapiro-Wilk is undefined for a constant sample")

    weights = _shapiro_weights(n)
    centered = x - x.mean()
    w = float((weights @ x) ** 2 / (centered @ centered))
    w = min(w, 1.0)

    if n == 3:
        p = _PI6 * (np.arcsin(np.sqrt(w)) - _STQR)
        return w, float(min(max(p, 0.0), 1.0))

    w1 = 1.0 - w
    if w1 <= 0.0:
        return w, 1.0
    y = np.log(w1)
    log_n = np.log(n)
    if n <= 11:
        gamma = np.polyval(_G, n)
        if y >= gamma:
            return w, 1e-19
        y = -np.log(gamma - y)
        mu = np.polyval(_C3, n)
        sigma = np.exp(np.polyval(_C4, n))
    else:
        mu = np.polyval(_C5, log_n)
        sigma = np.exp(np.polyval(_C6, log_n))
    p = _normal_sf(float((y - mu) / sigma))
    return w, float(min(max(p, 0.0), 1.0))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    i = 0
    sorted_vals = values[order]
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_u_counts(n_a: int, n_b: int) -> np.ndarray:
    """counts[u] of rank subsets of size n_a with U statistic u (tie-free)."""
    max_u = n_a * n_b
    # ways[k][u]: subsets of size k from the first i ranks with U value u
    ways = np.zeros((n_a + 1, max_u + 1))
    ways[0][0] = 1.0
    for i in range(1, n_a + n_b + 1):
        for k in range(min(i, n_a), 0, -1):
            # taking rank i as the k-th member adds i - k to U
            add = i - k
            if add > max_u:
                continue
            ways[k][add:] += ways[k - 1][: max_u + 1 - add]
    return ways[n_a]


def wilcoxon_rank_sum(a, b) -> tuple:
    """Mann-Whitney U test on two independent groups: (U, p, method).

    U is computed from group a's rank sum with mid-ranks for ties.  The
    two-sided p is exact (null-distribution enumeration) when
    n_a + n_b <= 20 with no ties, otherwise a tie-corrected normal
    approximation with continuity correction.
    """
    va = np.asarray(a.values if isinstance(a, GroupSample) else a, dtype=float)
    vb = np.asarray(b.values if isinstance(b, GroupSample) else b, dtype=float)
    if va.size == 0 or vb.size == 0:
        raise ValueError("both groups must be nonempty")
    n_a, n_b = va.size, vb.size
    combined = np.concatenate([va, vb])
    ranks = _midranks(combined)
    r_a = float(ranks[:n_a].sum())
    u = r_a - n_a * (n_a + 1) / 2.0

    has_ties = np.unique(combined).size < combined.size
    if n_a + n_b <= _EXACT_LIMIT and not has_ties:
        counts = _exact_u_counts(n_a, n_b)
        total = counts.sum()
        u_int = int(round(u))
        cdf = counts[: u_int + 1].sum() / total
        sf = counts[u_int:].sum() / total
        p = min(1.0, 2.0 * min(cdf, sf))
        return u, float(p), EXACT

    n = n_a + n_b
    mean = n_a * n_b / 2.0
    _, tie_counts = np.unique(combined, return_counts=True)
    tie_term = float((tie_counts.astype(float) ** 3 - tie_counts).sum())
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return u, 1.0, NORMAL_APPROX
    diff = abs(u - mean)
    z = max(diff - 0.5, 0.0) / np.sqrt(var)
    p = 2.0 * _normal_sf(float(z))
    return u, float(min(max(p, 0.0), 1.0)), NORMAL_APPROX


def _median(values: np.ndarray) -> float:
    return float(statistics.median(values.tolist()))


@dataclass(frozen=True)
class MedianRatio:
    median_completer: float
    median_non_completer: float
    ratio_percent: Optional[float]  # None when the non-completer median is 0

    @property
    def undefined(self) -> bool:
        return self.ratio_percent is None


def median_ratio_report(completers: GroupSample, non_completers: GroupSample) -> MedianRatio:
    """Group medians and how much more time completers spent, in percent.

    ratio_percent = 100 * (median_completer / median_non_completer - 1);
    even-length medians are the mean of the two central order statistics.
    """
    med_c = _median(np.asarray(completers.values, dtype=float))
    med_n = _median(np.asarray(non_completers.values, dtype=float))
    ratio = None if med_n == 0 else 100.0 * (med_c / med_n - 1.0)
    return MedianRatio(median_completer=med_c, median_non_completer=med_n, ratio_percent=ratio)


def first_step_extract(labeled: Sequence, cap: float = DEFAULT_DURATION_CAP) -> tuple:
    """Total derived time on step (1, 1) per learner, grouped by label.

    Learners who never visited the first step are excluded.  Returns
    (completer GroupSample, non-completer GroupSample).
    """
    groups: dict = {1: [], 0: []}
    for timeline, label in labeled:
        total = 0.0
        seen = False
        for activity, duration in derive_time_spent(timeline, cap=cap):
            if activity.week_number == 1 and activity.step_number == 1:
                total += duration
                seen = True
        if seen:
            groups[label.label].append(total)
    if not groups[1] or not groups[0]:
        raise ValueError("both groups need at least one visitor to step 1.1")
    return (
        GroupSample(group=COMPLETER, values=tuple(groups[1])),
        GroupSample(group=NON_COMPLETER, values=tuple(groups[0])),
    )


@dataclass
class StatReport:
    """Shapiro-Wilk per group, rank-sum test, and the median-time contrast."""

    course_id: str
    group_sizes: dict
    shapiro: dict  # group -> {"W": float, "p": float}
    wilcoxon: dict  # {"U": float, "p": float, "method": str}
    medians: MedianRatio
    subsample_seed: int

    def to_json_dict(self) -> dict:
        return {
            "course_id": self.course_id,
            "group_sizes": dict(self.group_sizes),
            "shapiro": {g: {"W": v["W"], "p": v["p"]} for g, v in self.shapiro.items()},
            "wilcoxon": dict(self.wilcoxon),
            "medians": {
                "completer": self.medians.median_completer,
                "non_completer": self.medians.median_non_completer,
                "ratio_percent": self.medians.ratio_percent,
            },
            "subsample_seed": self.subsample_seed,
        }

    def to_text(self) -> str:
        lines = [f"Time spent on step 1.1, course {self.course_id}"]
        for group in (COMPLETER, NON_COMPLETER):
            sw = self.shapiro[group]
            lines.append(
                f"  {group:<14} n={self.group_sizes[group]:<7} "
                f"Shapiro-Wilk W={sw['W']:.4f} p={sw['p']:.3g}"
            )
        lines.append(
            f"  rank-sum U={self.wilcoxon['U']:.1f} p={self.wilcoxon['p']:.3g}"
            f" ({self.wilcoxon['method']})"
        )
        if self.medians.undefined:
            lines.append(
                f"  medians: completer {self.medians.median_completer:.1f}s vs"
                f" non-completer {self.medians.median_non_completer:.1f}s (ratio undefined)"
            )
        else:
            lines.append(
                f"  medians: completer {self.medians.median_completer:.1f}s vs"
                f" non-completer {self.medians.median_non_completer:.1f}s"
                f" ({self.medians.ratio_percent:+.1f}% for completers)"
            )
        return "\n".join(lines) + "\n"


def build_stat_report(
    labeled: Sequence,
    spec: CourseSpec,
    cap: float = DEFAULT_DURATION_CAP,
    subsample_seed: int = 0,
) -> StatReport:
    """Run the full first-step analysis for one course."""
    if (1, 1) not in spec.step_set:
        raise ValueError("the course spec does not define step (1, 1)")
    completers, non_completers = first_step_extract(labeled, cap=cap)
    shapiro = {}
    for sample in (completers, non_completers):
        w, p = shapiro_wilk(sample.values, subsample_seed=subsample_seed)
        shapiro[sample.group] = {"W": w, "p": p}
    u, p, method = wilcoxon_rank_sum(completers, non_completers)
    return StatReport(
        course_id=spec.course_id,
        group_sizes={COMPLETER: len(completers.values), NON_COMPLETER: len(non_completers.values)},
        shapiro=shapiro,
        wilcoxon={"U": u, "p": p, "method": method},
        medians=median_ratio_report(completers, non_completers),
        subsample_seed=subsample_seed,
    )


def save_stat_report(report: StatReport, json_path=None, text_path=None, medians_csv_path=None) -> None:
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if text_path is not None:
        with open(text_path, "w") as fh:
            fh.write(report.to_text())
    if medians_csv_path is not None:
        with open(medians_csv_path, "w") as fh:
            fh.write("group,median_seconds\n")
            fh.write(f"{COMPLETER},{report.medians.median_completer!r}\n")
            fh.write(f"{NON_COMPLETER},{report.medians.median_non_completer!r}\n")
