from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weekone import cohort, evaluation
from weekone.errors import ConfigError, TrainingError
from weekone.evaluation import (
    ConfusionMatrix,
    compute_metrics,
    cross_validate,
    format_report_table,
    kfold_indices,
    oversample,
    repeated_holdout,
    stratified_split,
)

from conftest import make_matrix, labeled_cohort

FAST_STUMP = {"n_rounds": 3, "max_depth": 1, "min_samples_leaf": 1}


def imbalanced_matrix(n0=10, n1=3, seed=0):
    rng = np.random.default_rng(seed)
    y = np.array([0] * n0 + [1] * n1)
    X = np.column_stack([rng.random(n0 + n1), rng.random(n0 + n1) + y])
    return make_matrix(X, y, columns=["acc_1.1", "time_1.1"])


class TestOversample:
    def test_minority_duplicated_to_parity(self):
        m = imbalanced_matrix(10, 3)
        balanced = oversample(m, seed=1)
        assert balanced.class_counts() == {0: 10, 1: 10}
        # originals all retained, in order, at the front
        assert np.array_equal(balanced.X[:13], m.X)
        # the 7 added rows are copies of the 3 minority rows
        minority_rows = {tuple(row) for row in m.X[m.y == 1]}
        for row in balanced.X[13:]:
            assert tuple(row) in minority_rows
        assert (balanced.y[13:] == 1).all()

    def test_balanced_input_unchanged(self):
        m = imbalanced_matrix(5, 5)
        balanced = oversample(m, seed=3)
        assert np.array_equal(balanced.X, m.X)
        assert np.array_equal(balanced.y, m.y)

    def test_majority_minority_symmetric(self):
        m = imbalanced_matrix(3, 8)
        balanced = oversample(m, seed=2)
        assert balanced.class_counts() == {0: 8, 1: 8}

    def test_single_class_rejected(self):
        m = make_matrix(np.zeros((4, 1)), [0, 0, 0, 0], columns=["x"])
        with pytest.raises(TrainingError):
            oversample(m)

    def test_paper_scale_counts_equalize(self):
        y = np.array([0] * 94112 + [1] * 16092)
        m = make_matrix(np.zeros((y.size, 1)), y, columns=["x"])
        balanced = oversample(m, seed=0)
        assert balanced.class_counts() == {0: 94112, 1: 94112}

    def test_distinct_minority_rows_preserved(self):
        m = imbalanced_matrix(12, 4, seed=9)
        balanced = oversample(m, seed=7)
        before = {tuple(r) for r in m.X[m.y == 1]}
        after = {tuple(r) for r in balanced.X[balanced.y == 1]}
        assert before == after


class TestStratifiedSplit:
    def test_per_class_rounding(self):
        m = imbalanced_matrix(80, 20)
        train, test = stratified_split(m, test_fraction=0.3, seed=4)
        assert test.class_counts() == {0: 24, 1: 6}
        assert train.class_counts() == {0: 56, 1: 14}

    def test_deterministic(self):
        m = imbalanced_matrix(30, 10)
        a = stratified_split(m, seed=5)
        b = stratified_split(m, seed=5)
        assert np.array_equal(a[0].X, b[0].X) and np.array_equal(a[1].X, b[1].X)

    def test_smallest_balanced_case(self):
        m = imbalanced_matrix(2, 2)
        train, test = stratified_split(m, test_fraction=0.5, seed=1)
        assert train.class_counts() == {0: 1, 1: 1}
        assert test.class_counts() == {0: 1, 1: 1}

    def test_partition_is_disjoint_and_complete(self):
        m = imbalanced_matrix(25, 9, seed=3)
        train, test = stratified_split(m, seed=8)
        train_keys = set(train.learner_keys)
        test_keys = set(test.learner_keys)
        assert not train_keys & test_keys
        assert train_keys | test_keys == set(m.learner_keys)

    def test_bad_fraction_rejected(self):
        m = imbalanced_matrix(4, 4)
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ConfigError):
                stratified_split(m, test_fraction=bad)

    def test_tiny_class_rejected(self):
        m = imbalanced_matrix(5, 1)
        with pytest.raises(ConfigError):
            stratified_split(m)


class TestKFold:
    def test_exact_division(self):
        m = imbalanced_matrix(10, 10)
        folds = kfold_indices(m, k=10, seed=0)
        for train_idx, val_idx in folds:
            assert val_idx.size == 2
            assert m.y[val_idx].sum() == 1  # one row of each class

    def test_validation_folds_partition_indices(self):
        m = imbalanced_matrix(33, 17)
        folds = kfold_indices(m, k=5, seed=2)
        seen = np.concatenate([val for _, val in folds])
        assert np.array_equal(np.sort(seen), np.arange(m.n_rows))
        for train_idx, val_idx in folds:
            assert not set(train_idx) & set(val_idx)
            assert set(train_idx) | set(val_idx) == set(range(m.n_rows))

    def test_103_rows_fold_sizes(self):
        m = imbalanced_matrix(60, 43)
        folds = kfold_indices(m, k=10, seed=1)
        sizes = sorted(val.size for _, val in folds)
        assert set(sizes) <= {10, 11}
        assert sum(sizes) == 103

    def test_k_exceeding_class_count_rejected(self):
        m = imbalanced_matrix(30, 4)
        with pytest.raises(ConfigError):
            kfold_indices(m, k=5)

    def test_k_below_two_rejected(self):
        m = imbalanced_matrix(10, 10)
        with pytest.raises(ConfigError):
            kfold_indices(m, k=1)


class TestComputeMetrics:
    def cm(self, counts):
        return ConfusionMatrix(counts=counts)

    def test_worked_example(self):
        accuracy, per_class = compute_metrics(self.cm(((90, 10), (5, 95))))
        assert accuracy == pytest.approx(0.925)
        assert per_class[1].precision == pytest.approx(95 / 105)
        assert per_class[1].recall == pytest.approx(0.95)
        assert per_class[0].recall == pytest.approx(0.90)
        assert per_class[0].f1 == pytest.approx(2 * (90 / 95) * 0.9 / ((90 / 95) + 0.9))

    def test_perfect_diagonal(self):
        accuracy, per_class = compute_metrics(self.cm(((50, 0), (0, 50))))
        assert accuracy == 1.0
        for c in (0, 1):
            assert (per_class[c].precision, per_class[c].recall, per_class[c].f1) == (1.0, 1.0, 1.0)

    def test_always_predict_zero_on_balanced_data(self):
        accuracy, per_class = compute_metrics(self.cm(((50, 0), (50, 0))))
        assert accuracy == 0.5
        assert per_class[1].recall == 0.0
        assert per_class[1].precision == 0.0
        assert "precision" in per_class[1].zero_division

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics(self.cm(((0, 0), (0, 0))))

    @given(
        st.integers(0, 200), st.integers(0, 200), st.integers(0, 200), st.integers(0, 200)
    )
    def test_accuracy_is_prevalence_weighted_recall(self, n00, n01, n10, n11):
        if n00 + n01 + n10 + n11 == 0:
            return
        accuracy, per_class = compute_metrics(self.cm(((n00, n01), (n10, n11))))
        total = n00 + n01 + n10 + n11
        weighted = ((n00 + n01) * per_class[0].recall + (n10 + n11) * per_class[1].recall) / total
        assert accuracy == pytest.approx(weighted, abs=1e-12)


class TestRepeatedHoldout:
    def test_single_repeat_has_zero_margins(self, noisy_matrix):
        report = repeated_holdout(noisy_matrix, "ada", hyper=FAST_STUMP, repeats=1, seed=0)
        assert report.repeats == 1
        assert all(m == 0.0 for m in report.margins.values())

    def test_constant_metric_gives_zero_margin(self, separable_matrix):
        report = repeated_holdout(separable_matrix, "ada", hyper={"n_rounds": 5, "min_samples_leaf": 1}, repeats=6, seed=1)
        assert report.means["accuracy"] == 1.0
        assert report.margins["accuracy"] == 0.0

    def test_reproducible_and_thread_independent(self, noisy_matrix):
        a = repeated_holdout(noisy_matrix, "ada", hyper=FAST_STUMP, repeats=12, seed=3, threads=1)
        b = repeated_holdout(noisy_matrix, "ada", hyper=FAST_STUMP, repeats=12, seed=3, threads=4)
        assert a.to_json_dict() == b.to_json_dict()

    def test_no_oversampled_row_reaches_test(self, noisy_matrix):
        observed = []

        def probe(r, train_m, test_m):
            observed.append((train_m, test_m))

        repeated_holdout(noisy_matrix, "ada", hyper=FAST_STUMP, repeats=8, seed=5, probe=probe)
        originals = set(noisy_matrix.learner_keys)
        assert len(observed) == 8
        for train_m, test_m in observed:
            test_keys = test_m.learner_keys
            assert len(set(test_keys)) == len(test_keys)  # no duplicates in test
            assert set(test_keys) <= originals
            assert not set(test_keys) & set(train_m.learner_keys)  # disjoint even after balancing

    def test_training_side_is_balanced(self, noisy_matrix):
        seen = []

        def probe(r, train_m, test_m):
            seen.append(train_m.class_counts())

        repeated_holdout(noisy_matrix, "ada", hyper=FAST_STUMP, repeats=4, seed=6, probe=probe)
        for counts in seen:
            assert counts[0] == counts[1]

    def test_invalid_repeats_rejected(self, noisy_matrix):
        with pytest.raises(ConfigError):
            repeated_holdout(noisy_matrix, "ada", repeats=0)

    def test_failure_names_the_repeat(self, noisy_matrix):
        with pytest.raises(TrainingError, match="repeat 0"):
            repeated_holdout(noisy_matrix, "gb", hyper={"learning_rate": 1.5}, repeats=2, seed=0)

    def test_margin_magnitude_on_synth_cohort(self):
        spec, labeled, _ = labeled_cohort(learners=600, seed=12)
        matrix = cohort.build_features(labeled, spec, mode="per-step")
        report = repeated_holdout(matrix, "ada", hyper={"n_rounds": 10, "max_depth": 1}, repeats=100, seed=2)
        assert report.margins["accuracy"] <= 0.01
        assert 0.7 <= report.means["accuracy"] <= 1.0

    def test_margins_shrink_with_more_repeats(self, noisy_matrix):
        hyper = {"n_rounds": 1, "max_depth": 1, "min_samples_leaf": 1}
        wins = 0
        pairs = 20
        for s in range(pairs):
            m100 = repeated_holdout(noisy_matrix, "ada", hyper=hyper, repeats=100, seed=1000 + s)
            m400 = repeated_holdout(noisy_matrix, "ada", hyper=hyper, repeats=400, seed=5000 + s)
            if m400.margins["accuracy"] <= m100.margins["accuracy"]:
                wins += 1
        assert wins >= 19


class TestCrossValidate:
    def test_separable_fixture_perfect_on_both_folds(self, separable_matrix):
        report = cross_validate(separable_matrix, "ada", hyper={"n_rounds": 5, "min_samples_leaf": 1}, k=2, seed=0)
        assert report.repeats == 2
        assert all(rec["accuracy"] == 1.0 for rec in report.per_repeat)

    def test_aggregation_matches_manual_fold_means(self, noisy_matrix):
        report = cross_validate(noisy_matrix, "ada", hyper=FAST_STUMP, k=4, seed=7)
        manual = np.mean([rec["accuracy"] for rec in report.per_repeat])
        assert report.means["accuracy"] == pytest.approx(manual, abs=1e-15)

    def test_validation_rows_never_oversampled(self, noisy_matrix):
        observed = []

        def probe(f, train_m, val_m):
            observed.append((train_m, val_m))

        cross_validate(noisy_matrix, "ada", hyper=FAST_STUMP, k=5, seed=8, probe=probe)
        originals = set(noisy_matrix.learner_keys)
        val_all = []
        for train_m, val_m in observed:
            assert len(set(val_m.learner_keys)) == len(val_m.learner_keys)
            assert set(val_m.learner_keys) <= originals
            assert not set(val_m.learner_keys) & set(train_m.learner_keys)
            val_all.extend(val_m.learner_keys)
        assert sorted(val_all) == sorted(noisy_matrix.learner_keys)

    def test_cv_close_to_holdout_on_synth_cohort(self):
        spec, labeled, _ = labeled_cohort(learners=500, seed=21)
        matrix = cohort.build_features(labeled, spec, mode="per-step")
        hyper = {"n_rounds": 15, "max_depth": 1}
        cv = cross_validate(matrix, "ada", hyper=hyper, k=10, seed=3)
        ho = repeated_holdout(matrix, "ada", hyper=hyper, repeats=20, seed=3)
        assert abs(cv.means["accuracy"] - ho.means["accuracy"]) <= 0.02


class TestReportFormatting:
    def test_table_has_one_row_per_learner(self, noisy_matrix):
        reports = [
            repeated_holdout(noisy_matrix, kind, hyper=FAST_STUMP, repeats=2, seed=1, course_id="demo")
            for kind in ("ada", "gb")
        ]
        table = format_report_table(reports)
        lines = table.strip().splitlines()
        assert lines[0].startswith("Course: demo")
        assert "Accuracy" in lines[1] and "[+-]" in lines[1]
        assert lines[2].startswith("AdaBoost")
        assert lines[3].startswith("Gradient Boosting")

    def test_json_payload_carries_per_repeat_metrics(self, noisy_matrix):
        report = repeated_holdout(noisy_matrix, "ada", hyper=FAST_STUMP, repeats=3, seed=2)
        payload = report.to_json_dict()
        assert payload["repeats"] == 3
        assert len(payload["per_repeat"]) == 3
        assert set(payload["means"]) == set(evaluation.METRIC_KEYS)
