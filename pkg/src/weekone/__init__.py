"""Predicting MOOC dropout from first-week activity.

Library + CLI covering the full pipeline: activity-log ingestion, run
merging, completion labeling, week-1 feature extraction, four tree-ensemble
learners with Gini importance, the repeated-split evaluation harness, and
nonparametric completer/non-completer statistics, plus a deterministic
synthetic-cohort generator for verification.
"""

__version__ = "0.1.0"

from .cohort import (
    AGGREGATE,
    PER_STEP,
    CompletionLabel,
    CourseSpec,
    FeatureMatrix,
    LearnerTimeline,
    StepActivity,
    build_features,
    derive_time_spent,
    filter_and_label,
    load_course_spec,
    merge_runs,
    parse_activity_log,
)
from .ensembles import (
    EnsembleModel,
    ensemble_gini_importance,
    load_model,
    predict_proba,
    save_model,
    train,
    train_adaboost,
    train_gradient_boosting,
    train_random_forest,
    train_second_order_boosting,
)
from .errors import ConfigError, ParseError, SchemaError, TrainingError
from .evaluation import (
    ClassMetrics,
    ConfusionMatrix,
    EvalReport,
    compute_metrics,
    cross_validate,
    kfold_indices,
    oversample,
    repeated_holdout,
    stratified_split,
)
from .stats import (
    GroupSample,
    StatReport,
    build_stat_report,
    first_step_extract,
    median_ratio_report,
    shapiro_wilk,
    wilcoxon_rank_sum,
)
from .synth import SynthCohort, SynthConfig, generate_cohort, write_cohort
from .trees import (
    DecisionTree,
    SplitCandidate,
    TreeNode,
    best_split,
    gini_impurity,
    grow_tree,
    predict_tree,
    tree_feature_importance,
)
