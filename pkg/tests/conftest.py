from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from weekone.cohort import FeatureMatrix
from weekone import cohort, synth


def make_matrix(X, y, columns=None, mode="per-step") -> FeatureMatrix:
    X = np.asarray(X, dtype=float)
    if columns is None:
        columns = [f"acc_1.{i + 1}" for i in range(X.shape[1])]
    keys = [(f"L{i:03d}", 1) for i in range(X.shape[0])]
    return FeatureMatrix(columns=columns, X=X, y=np.asarray(y), mode=mode, learner_keys=keys)


@pytest.fixture
def separable_matrix() -> FeatureMatrix:
    """40 rows, 2 features, linearly separable on feature 0."""
    rng = np.random.default_rng(1234)
    n = 40
    y = np.array([0] * 20 + [1] * 20)
    x0 = np.where(y == 0, rng.uniform(0, 40, n), rng.uniform(60, 100, n))
    x1 = rng.uniform(0, 100, n)
    return make_matrix(np.column_stack([x0, x1]), y, columns=["acc_1.1", "time_1.1"])


@pytest.fixture
def noisy_matrix() -> FeatureMatrix:
    """120 rows with a strong but imperfect signal in both features."""
    rng = np.random.default_rng(99)
    n = 120
    y = (rng.random(n) < 0.4).astype(int)
    x0 = rng.poisson(1.0 + 2.0 * y, n).astype(float)
    x1 = rng.lognormal(5.0 + 0.8 * y, 0.6, n)
    return make_matrix(np.column_stack([x0, x1]), y, columns=["acc_1.1", "time_1.1"])


def labeled_cohort(**overrides):
    """Generate a small synthetic cohort and return (spec, labeled, truth)."""
    config = synth.SynthConfig(**{"learners": 400, "seed": 5, **overrides})
    generated = synth.generate_cohort(config)
    merged = cohort.merge_runs(generated.activities, generated.course_spec)
    labeled = cohort.filter_and_label(merged, generated.course_spec)
    return generated.course_spec, labeled, dict(generated.labels)
