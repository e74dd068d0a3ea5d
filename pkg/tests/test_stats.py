from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from weekone import cohort
from weekone.stats import (
    COMPLETER,
    EXACT,
    NON_COMPLETER,
    NORMAL_APPROX,
    GroupSample,
    build_stat_report,
    first_step_extract,
    median_ratio_report,
    shapiro_wilk,
    wilcoxon_rank_sum,
)

from conftest import labeled_cohort
from oracles import enumerate_rank_sum_p


class TestShapiroWilk:
    def test_equally_spaced_three_points_give_w_one(self):
        w, p = shapiro_wilk([1.0, 2.0, 3.0])
        assert w == 1.0
        assert p == pytest.approx(1.0, abs=1e-9)

    def test_skewed_sample_rejects_normality(self):
        rng = np.random.default_rng(6)
        w, p = shapiro_wilk(rng.exponential(1.0, 500))
        assert p < 0.01

    def test_constant_sample_rejected(self):
        with pytest.raises(ValueError):
            shapiro_wilk([5.0] * 10)

    def test_too_small_sample_rejected(self):
        with pytest.raises(ValueError):
            shapiro_wilk([1.0, 2.0])

    def test_matches_scipy_across_sizes(self):
        rng = np.random.default_rng(1)
        for n in (3, 4, 5, 7, 9, 11, 12, 30, 200, 1200):
            x = rng.normal(50, 7, n)
            w, p = shapiro_wilk(x)
            w_ref, p_ref = scipy_stats.shapiro(x)
            assert w == pytest.approx(w_ref, abs=1e-7)
            assert p == pytest.approx(p_ref, abs=1e-6)

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(0, 1, 60)
        w, _ = shapiro_wilk(x)
        for a, b in ((2.5, 10.0), (0.003, -7.0), (1000.0, 0.0)):
            w_t, _ = shapiro_wilk(a * x + b)
            assert w_t == pytest.approx(w, abs=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.lognormal(1.0, 0.8, 40)
        assert shapiro_wilk(x) == shapiro_wilk(rng.permutation(x))

    def test_oversize_sample_uses_seeded_subsample(self):
        rng = np.random.default_rng(4)
        x = rng.normal(0, 1, 9000)
        a = shapiro_wilk(x, subsample_seed=1)
        b = shapiro_wilk(x, subsample_seed=1)
        c = shapiro_wilk(x, subsample_seed=2)
        assert a == b
        assert a != c  # a different subsample changes the statistic
        assert 0 < a[0] <= 1.0

    def test_w_bounded(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.exponential(2.0, int(rng.integers(5, 300)))
            w, p = shapiro_wilk(x)
            assert 0.0 < w <= 1.0
            assert 0.0 <= p <= 1.0


class TestWilcoxonRankSum:
    def test_worked_example(self):
        u, p, method = wilcoxon_rank_sum([1.0, 2.0], [3.0, 4.0])
        assert u == 0.0
        assert method == EXACT
        assert p == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_identical_samples_p_one(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0]
        u, p, method = wilcoxon_rank_sum(x, list(x))
        assert p == pytest.approx(1.0, abs=1e-12)

    def test_separated_large_samples(self):
        rng = np.random.default_rng(7)
        a = rng.lognormal(np.log(400), 1.0, 500)
        b = rng.lognormal(np.log(200), 1.0, 500)
        u, p, method = wilcoxon_rank_sum(a, b)
        assert method == NORMAL_APPROX
        assert p < 1e-10

    def test_exact_p_matches_enumeration(self):
        rng = np.random.default_rng(8)
        for _ in range(60):
            n_a = int(rng.integers(1, 7))
            n_b = int(rng.integers(1, 13 - n_a))
            pool = rng.permutation(np.arange(100.0))[: n_a + n_b]
            a, b = pool[:n_a].tolist(), pool[n_a:].tolist()
            u, p, method = wilcoxon_rank_sum(a, b)
            assert method == EXACT
            u_ref, p_ref = enumerate_rank_sum_p(a, b)
            assert u == u_ref
            assert p == pytest.approx(p_ref, abs=1e-12)

    def test_group_swap_symmetry(self):
        rng = np.random.default_rng(9)
        for n_a, n_b in ((3, 5), (6, 6), (10, 25), (40, 13)):
            a = rng.normal(0, 1, n_a).tolist()
            b = rng.normal(0.4, 1, n_b).tolist()
            u_ab, p_ab, m_ab = wilcoxon_rank_sum(a, b)
            u_ba, p_ba, m_ba = wilcoxon_rank_sum(b, a)
            assert u_ba == n_a * n_b - u_ab
            assert p_ab == p_ba
            assert m_ab == m_ba

    def test_normal_approximation_close_to_exact_for_small_n(self):
        # The tie-corrected continuity-corrected approximation reproduces the
        # exact p within 0.02 absolute on 8 <= n <= 20 tie-free fixtures.
        rng = np.random.default_rng(10)
        for _ in range(40):
            n_a = int(rng.integers(4, 10))
            n_b = int(rng.integers(max(4, 8 - n_a), 21 - n_a))
            pool = rng.permutation(np.arange(0.0, 60.0, 0.5))[: n_a + n_b]
            a, b = pool[:n_a].tolist(), pool[n_a:].tolist()
            u, p_exact, method = wilcoxon_rank_sum(a, b)
            assert method == EXACT
            n = n_a + n_b
            mean = n_a * n_b / 2.0
            sd = math.sqrt(n_a * n_b * (n + 1) / 12.0)
            z = max(abs(u - mean) - 0.5, 0.0) / sd
            p_approx = min(1.0, math.erfc(z / math.sqrt(2.0)))
            assert abs(p_approx - p_exact) <= 0.02

    def test_matches_scipy_exact(self):
        rng = np.random.default_rng(11)
        a = rng.normal(0, 1, 8).tolist()
        b = rng.normal(1.0, 1, 9).tolist()
        u, p, method = wilcoxon_rank_sum(a, b)
        ref = scipy_stats.mannwhitneyu(a, b, alternative="two-sided", method="exact")
        assert method == EXACT
        assert u == ref.statistic
        assert p == pytest.approx(ref.pvalue, abs=1e-12)

    def test_matches_scipy_asymptotic_with_ties(self):
        rng = np.random.default_rng(12)
        a = rng.integers(0, 8, 30).astype(float).tolist()
        b = (rng.integers(0, 8, 35) + 1.0).tolist()
        u, p, method = wilcoxon_rank_sum(a, b)
        ref = scipy_stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        assert method == NORMAL_APPROX
        assert u == ref.statistic
        assert p == pytest.approx(ref.pvalue, rel=1e-9)

    def test_ties_inside_small_samples_use_approximation(self):
        u, p, method = wilcoxon_rank_sum([1.0, 2.0, 2.0], [3.0, 4.0])
        assert method == NORMAL_APPROX

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            wilcoxon_rank_sum([], [1.0])

    def test_all_identical_values_give_p_one(self):
        u, p, method = wilcoxon_rank_sum([2.0, 2.0, 2.0], [2.0, 2.0])
        assert p == 1.0


class TestMedianRatio:
    def sample(self, group, values):
        return GroupSample(group=group, values=tuple(values))

    def test_double_median_is_plus_hundred_percent(self):
        frag = median_ratio_report(
            self.sample(COMPLETER, [120.0, 120.0, 120.0]),
            self.sample(NON_COMPLETER, [60.0, 60.0, 60.0]),
        )
        assert frag.ratio_percent == pytest.approx(100.0)

    def test_equal_medians_zero_percent(self):
        frag = median_ratio_report(
            self.sample(COMPLETER, [50.0, 70.0]), self.sample(NON_COMPLETER, [40.0, 80.0])
        )
        assert frag.ratio_percent == pytest.approx(0.0)

    def test_even_length_uses_central_mean(self):
        frag = median_ratio_report(
            self.sample(COMPLETER, [10.0, 20.0, 30.0, 40.0]),
            self.sample(NON_COMPLETER, [5.0, 5.0]),
        )
        assert frag.median_completer == 25.0

    def test_zero_non_completer_median_flagged(self):
        frag = median_ratio_report(
            self.sample(COMPLETER, [10.0]), self.sample(NON_COMPLETER, [0.0, 0.0, 0.0])
        )
        assert frag.undefined
        assert frag.ratio_percent is None

    def test_601_percent_configuration_reproduced(self):
        from weekone.synth import SynthConfig, generate_cohort
        from weekone.cohort import filter_and_label, merge_runs
        from weekone.stats import first_step_extract

        generated = generate_cohort(
            SynthConfig(
                learners=6000,
                completer_prior=0.5,
                visit_rate=(2.0, 2.0),
                duration_median=(120.0, 120.0 * 7.01),
                noise=0.0,
                seed=4,
            )
        )
        labeled = filter_and_label(merge_runs(generated.activities, generated.course_spec), generated.course_spec)
        frag = median_ratio_report(*first_step_extract(labeled))
        assert frag.ratio_percent == pytest.approx(601.0, rel=0.15)

    def test_scale_invariance(self):
        rng = np.random.default_rng(13)
        a = rng.lognormal(3, 1, 101)
        b = rng.lognormal(2.5, 1, 151)
        base = median_ratio_report(self.sample(COMPLETER, a), self.sample(NON_COMPLETER, b))
        for c in (0.25, 3.0, 1e4):
            scaled = median_ratio_report(
                self.sample(COMPLETER, c * a), self.sample(NON_COMPLETER, c * b)
            )
            assert scaled.ratio_percent == pytest.approx(base.ratio_percent, rel=1e-12)


class TestFirstStepExtract:
    def test_visits_to_first_step_are_summed(self):
        spec, labeled, _ = labeled_cohort(learners=50, seed=7)
        completers, non_completers = first_step_extract(labeled)
        horizon_totals = []
        for timeline, label in labeled:
            total = sum(
                d
                for a, d in cohort.derive_time_spent(timeline)
                if a.week_number == 1 and a.step_number == 1
            )
            if total > 0:
                horizon_totals.append(total)
        assert len(completers.values) + len(non_completers.values) == len(horizon_totals)

    def test_learners_without_first_step_visit_are_excluded(self):
        spec, labeled, _ = labeled_cohort(learners=120, seed=8)
        visitors = sum(
            1
            for timeline, _ in labeled
            if any(a.week_number == 1 and a.step_number == 1 for a in timeline.activities)
        )
        completers, non_completers = first_step_extract(labeled)
        assert len(completers.values) + len(non_completers.values) == visitors

    def test_manual_two_learner_extraction(self):
        from test_cohort import activity, two_week_spec

        spec = two_week_spec()
        acts = [
            activity("C1", step=1, start=0.0, end=100.0),
            activity("C1", step=1, start=200.0, end=250.0),
            activity("C1", step=2, start=400.0, end=500.0),
            activity("N1", step=2, start=0.0, end=50.0),  # never opens step 1.1
            activity("N2", step=1, start=0.0, end=40.0),
        ]
        merged = cohort.merge_runs(acts, spec)
        labeled = cohort.filter_and_label(merged, spec, threshold=0.3)
        completers, non_completers = first_step_extract(labeled)
        assert completers.values == (150.0,)  # C1's two step-1.1 visits summed
        assert non_completers.values == (40.0,)  # N1 is excluded, N2 contributes


class TestStatReport:
    def test_full_report_on_synth_cohort(self):
        spec, labeled, _ = labeled_cohort(learners=400, seed=9)
        report = build_stat_report(labeled, spec, subsample_seed=3)
        assert report.subsample_seed == 3
        assert set(report.shapiro) == {COMPLETER, NON_COMPLETER}
        for group in report.shapiro.values():
            assert 0 < group["W"] <= 1.0
            assert group["p"] < 0.01  # log-normal dwell times are skewed
        assert report.wilcoxon["p"] < 0.05
        assert report.medians.ratio_percent is not None

    def test_report_serialization(self, tmp_path):
        import json

        spec, labeled, _ = labeled_cohort(learners=200, seed=10)
        report = build_stat_report(labeled, spec)
        from weekone.stats import save_stat_report

        save_stat_report(
            report,
            json_path=tmp_path / "stats.json",
            text_path=tmp_path / "stats.txt",
            medians_csv_path=tmp_path / "medians.csv",
        )
        payload = json.loads((tmp_path / "stats.json").read_text())
        assert payload["course_id"] == spec.course_id
        assert "wilcoxon" in payload and "shapiro" in payload
        text = (tmp_path / "stats.txt").read_text()
        assert "rank-sum" in text and "medians" in text
        csv_lines = (tmp_path / "medians.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "group,median_seconds"
        assert len(csv_lines) == 3

    def test_missing_first_step_rejected(self):
        from weekone.cohort import CourseSpec

        spec, labeled, _ = labeled_cohort(learners=30, seed=11)
        no_first = CourseSpec(
            course_id="x", runs=((1, 0.0),), weeks=1, steps=((1, 2), (1, 3))
        )
        with pytest.raises(ValueError):
            build_stat_report(labeled, no_first)
