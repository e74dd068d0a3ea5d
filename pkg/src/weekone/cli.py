"""Command-line entry point.

One verb per pipeline stage: synth, ingest, features, train, evaluate, cv,
stats, report.  All randomness flows from --seed; outputs are byte-identical
across reruns and across --threads settings.  Exit codes: 0 success, 1
validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__, ensembles, evaluation, plots, stats
from .cohort import (
    AGGREGATE,
    FEATURE_MODES,
    PER_STEP,
    FeatureMatrix,
    build_features,
    filter_and_label,
    load_course_spec,
    merge_runs,
    parse_activity_log,
)
from .errors import ConfigError
from .evaluation import cross_validate, format_report_table, repeated_holdout
from .synth import SynthConfig, generate_cohort, write_cohort

MODELS = ["rf", "gb", "ada", "xgb"]

# Per-model base-tree depth defaults: deep bagged trees, shallow boosted
# trees, stumps for the reweighting learner.
DEFAULT_DEPTH = {"rf": 12, "gb": 3, "ada": 1, "xgb": 3}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_out(p):
    p.add_argument("--out", required=True, help="output directory (created if missing)")


def _add_ingest_args(p):
    p.add_argument("--input", required=True, help="activity CSV path")
    p.add_argument("--spec", required=True, help="course spec JSON path")
    p.add_argument("--threshold", type=float, default=0.8, help="completion coverage threshold (default 0.8)")


def _add_feature_args(p):
    p.add_argument("--mode", choices=list(FEATURE_MODES), default=PER_STEP, help="feature mode (default per-step)")
    p.add_argument("--window-weeks", type=int, default=1, help="feature window length in weeks (default 1)")
    p.add_argument("--cap-seconds", type=float, default=3600.0, help="cap on gap-derived visit durations (default 3600)")


def _add_hyper_args(p):
    p.add_argument("--n-trees", type=int, default=100, help="trees (forest) or rounds (boosting); default 100")
    p.add_argument("--learning-rate", type=float, default=0.1, help="boosting shrinkage (default 0.1)")
    p.add_argument("--max-depth", type=int, default=None, help="base-tree depth (default: rf 12, gb/xgb 3, ada 1)")
    p.add_argument("--min-samples-leaf", type=int, default=5, help="minimum samples per leaf (default 5)")
    p.add_argument("--mtry", type=int, default=None, help="forest per-node feature draw (default floor(sqrt(d)))")
    p.add_argument("--reg-lambda", type=float, default=1.0, help="second-order boosting L2 strength (default 1.0)")
    p.add_argument("--gamma", type=float, default=0.0, help="second-order boosting split penalty (default 0.0)")


def _add_eval_args(p, with_repeats=True):
    if with_repeats:
        p.add_argument("--repeats", type=int, default=100, help="random train/test repetitions (default 100)")
    p.add_argument("--test-fraction", type=float, default=0.3, help="test share per split (default 0.3)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: available cores)")
    p.add_argument("--course-id", default="", help="course label for the report header")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="weekone", description="First-week MOOC dropout prediction toolkit")
    parser.add_argument("--version", action="version", version=f"weekone {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic cohort (activity CSV + course spec + labels)")
    p.add_argument("--learners", type=int, default=5000)
    p.add_argument("--prior", type=float, default=0.146, help="completer prior (default 0.146)")
    p.add_argument("--weeks", type=int, default=4)
    p.add_argument("--steps-per-week", type=int, default=5)
    p.add_argument("--runs", type=int, default=2)
    p.add_argument("--visit-rate0", type=float, default=1.5, help="non-completer mean visits per week-1 step")
    p.add_argument("--visit-rate1", type=float, default=3.0, help="completer mean visits per week-1 step")
    p.add_argument("--median0", type=float, default=180.0, help="non-completer median visit seconds")
    p.add_argument("--median1", type=float, default=360.0, help="completer median visit seconds")
    p.add_argument("--sigma", type=float, default=1.0, help="log-normal sigma of visit durations")
    p.add_argument("--quiz0", type=float, default=None, help="non-completer quiz correct-rate (omit for no quizzes)")
    p.add_argument("--quiz1", type=float, default=None, help="completer quiz correct-rate (omit for no quizzes)")
    p.add_argument("--noise", type=float, default=0.02, help="fraction with behaviour from the other class")
    p.add_argument("--course-id", default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)

    p = sub.add_parser("ingest", help="parse + merge + label a cohort; write labels and a summary")
    _add_ingest_args(p)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)

    p = sub.add_parser("features", help="build the week-1 feature matrix (CSV + JSON)")
    _add_ingest_args(p)
    _add_feature_args(p)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)

    p = sub.add_parser("train", help="fit one learner on a feature matrix; write model JSON")
    p.add_argument("--input", required=True, help="feature matrix CSV (from `features`)")
    p.add_argument("--model", choices=MODELS, default="rf")
    p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True,
                   help="oversample to balanced classes before fitting (default on)")
    _add_hyper_args(p)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)

    p = sub.add_parser("evaluate", help="repeated random-split evaluation with per-class metrics")
    p.add_argument("--input", required=True, help="feature matrix CSV (from `features`)")
    p.add_argument("--model", choices=MODELS + ["all"], default="all")
    _add_hyper_args(p)
    _add_eval_args(p)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    p.add_argument("--input", required=True, help="feature matrix CSV (from `features`)")
    p.add_argument("--model", choices=MODELS + ["all"], default="all")
    p.add_argument("--k", type=int, default=10, help="fold count (default 10)")
    _add_hyper_args(p)
    _add_eval_args(p, with_repeats=False)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)

    p = sub.add_parser("stats", help="first-step time analysis: normality, rank-sum, median ratio")
    _add_ingest_args(p)
    p.add_argument("--cap-seconds", type=float, default=3600.0)
    p.add_argument("--seed", type=int, default=0, help="subsample seed for oversize normality samples")
    _add_out(p)

    p = sub.add_parser("report", help="full pipeline: features, all learners, importances, stats, figures")
    _add_ingest_args(p)
    _add_feature_args(p)
    _add_hyper_args(p)
    _add_eval_args(p)
    p.set_defaults(repeats=5)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)

    return parser


def _positive(value, flag):
    if value <= 0:
        raise ConfigError(f"{flag} must be positive")


def _validate_common(args) -> None:
    if getattr(args, "threshold", None) is not None and not 0.0 < args.threshold <= 1.0:
        raise ConfigError("--threshold must lie in (0, 1]")
    if getattr(args, "cap_seconds", None) is not None and args.cap_seconds < 0:
        raise ConfigError("--cap-seconds must be nonnegative")
    if getattr(args, "window_weeks", None) is not None and args.window_weeks < 1:
        raise ConfigError("--window-weeks must be >= 1")
    if getattr(args, "repeats", None) is not None and args.repeats < 1:
        raise ConfigError("--repeats must be >= 1")
    if getattr(args, "k", None) is not None and args.k < 2:
        raise ConfigError("--k must be >= 2")
    if getattr(args, "test_fraction", None) is not None and not 0.0 < args.test_fraction < 1.0:
        raise ConfigError("--test-fraction must lie in (0, 1)")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    if getattr(args, "n_trees", None) is not None:
        _positive(args.n_trees, "--n-trees")
    if getattr(args, "learning_rate", None) is not None and not 0.0 < args.learning_rate <= 1.0:
        raise ConfigError("--learning-rate must lie in (0, 1]")
    if getattr(args, "min_samples_leaf", None) is not None:
        _positive(args.min_samples_leaf, "--min-samples-leaf")
    if getattr(args, "max_depth", None) is not None and args.max_depth < 0:
        raise ConfigError("--max-depth must be >= 0")
    if getattr(args, "mtry", None) is not None:
        _positive(args.mtry, "--mtry")
    if getattr(args, "reg_lambda", None) is not None and args.reg_lambda < 0:
        raise ConfigError("--reg-lambda must be nonnegative")
    if getattr(args, "gamma", None) is not None and args.gamma < 0:
        raise ConfigError("--gamma must be nonnegative")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _hyper_for(args, model: str) -> dict:
    depth = args.max_depth if args.max_depth is not None else DEFAULT_DEPTH[model]
    if model == "rf":
        return {
            "n_trees": args.n_trees,
            "mtry": args.mtry,
            "max_depth": depth,
            "min_samples_leaf": args.min_samples_leaf,
        }
    if model == "gb":
        return {
            "n_rounds": args.n_trees,
            "learning_rate": args.learning_rate,
            "max_depth": depth,
            "min_samples_leaf": args.min_samples_leaf,
        }
    if model == "ada":
        return {
            "n_rounds": args.n_trees,
            "max_depth": depth,
            "min_samples_leaf": args.min_samples_leaf,
        }
    return {
        "n_rounds": args.n_trees,
        "learning_rate": args.learning_rate,
        "lam": args.reg_lambda,
        "gamma": args.gamma,
        "max_depth": depth,
        "min_samples_leaf": args.min_samples_leaf,
    }


def _load_labeled(args):
    spec = load_course_spec(args.spec)
    activities = parse_activity_log(args.input, spec)
    merged = merge_runs(activities, spec)
    return spec, activities, filter_and_label(merged, spec, threshold=args.threshold)


def _cmd_synth(args) -> None:
    quiz = None
    if (args.quiz0 is None) != (args.quiz1 is None):
        raise ConfigError("--quiz0 and --quiz1 must be given together")
    if args.quiz0 is not None:
        quiz = (args.quiz0, args.quiz1)
    config = SynthConfig(
        learners=args.learners,
        completer_prior=args.prior,
        weeks=args.weeks,
        steps_per_week=args.steps_per_week,
        runs=args.runs,
        visit_rate=(args.visit_rate0, args.visit_rate1),
        duration_median=(args.median0, args.median1),
        duration_sigma=args.sigma,
        quiz=quiz,
        noise=args.noise,
        seed=args.seed,
        course_id=args.course_id,
    )
    cohort = generate_cohort(config)
    paths = write_cohort(cohort, _out_dir(args))
    completers = sum(label for _, label in cohort.labels)
    print(
        f"wrote {len(cohort.activities)} activities for {len(cohort.labels)} learners "
        f"({completers} completers) to {paths['activity'].parent}"
    )


def _cmd_ingest(args) -> None:
    out = _out_dir(args)
    spec, activities, labeled = _load_labeled(args)
    with open(out / "labels.csv", "w") as fh:
        fh.write("learner_id,run,label,coverage\n")
        for timeline, label in labeled:
            fh.write(f"{timeline.learner_id},{timeline.run},{label.label},{label.coverage!r}\n")
    summary = {
        "course_id": spec.course_id,
        "activities": len(activities),
        "learners": len(labeled),
        "completers": sum(lab.label for _, lab in labeled),
        "non_completers": sum(1 - lab.label for _, lab in labeled),
        "threshold": args.threshold,
    }
    _write_json(out / "summary.json", summary)
    print(
        f"{summary['learners']} learners retained: {summary['non_completers']} non-completers, "
        f"{summary['completers']} completers"
    )


def _cmd_features(args) -> None:
    out = _out_dir(args)
    spec, _, labeled = _load_labeled(args)
    matrix = build_features(labeled, spec, mode=args.mode, window_weeks=args.window_weeks, cap=args.cap_seconds)
    matrix.to_csv(out / "features.csv")
    _write_json(out / "features.json", matrix.to_json_dict())
    print(f"wrote {matrix.n_rows} x {len(matrix.columns)} {args.mode} matrix to {out / 'features.csv'}")


def _cmd_train(args) -> None:
    out = _out_dir(args)
    matrix = FeatureMatrix.from_csv(args.input)
    if args.balance:
        matrix = evaluation.oversample(matrix, seed=args.seed)
    threads = args.threads if args.model == "rf" else 1
    model = ensembles.train(matrix, args.model, seed=args.seed, threads=threads, **_hyper_for(args, args.model))
    ensembles.save_model(model, out / "model.json")
    top = max(ensembles.ensemble_gini_importance(model).items(), key=lambda kv: kv[1])
    print(f"trained {model.kind} ({len(model.trees)} trees); top importance: {top[0]} = {top[1]:.3f}")


def _models_for(args) -> list:
    return MODELS if args.model == "all" else [args.model]


def _cmd_evaluate(args) -> None:
    out = _out_dir(args)
    matrix = FeatureMatrix.from_csv(args.input)
    reports = [
        repeated_holdout(
            matrix,
            model,
            hyper=_hyper_for(args, model),
            repeats=args.repeats,
            test_fraction=args.test_fraction,
            seed=args.seed,
            threads=args.threads,
            course_id=args.course_id,
        )
        for model in _models_for(args)
    ]
    table = format_report_table(reports)
    _write_json(out / "evaluation.json", {"reports": [r.to_json_dict() for r in reports]})
    (out / "evaluation.txt").write_text(table)
    print(table, end="")


def _cmd_cv(args) -> None:
    out = _out_dir(args)
    matrix = FeatureMatrix.from_csv(args.input)
    reports = [
        cross_validate(
            matrix,
            model,
            hyper=_hyper_for(args, model),
            k=args.k,
            seed=args.seed,
            threads=args.threads,
            course_id=args.course_id,
        )
        for model in _models_for(args)
    ]
    table = format_report_table(reports)
    _write_json(out / "cv.json", {"reports": [r.to_json_dict() for r in reports]})
    (out / "cv.txt").write_text(table)
    print(table, end="")


def _cmd_stats(args) -> None:
    out = _out_dir(args)
    spec, _, labeled = _load_labeled(args)
    report = stats.build_stat_report(labeled, spec, cap=args.cap_seconds, subsample_seed=args.seed)
    stats.save_stat_report(
        report,
        json_path=out / "stats.json",
        text_path=out / "stats.txt",
        medians_csv_path=out / "medians.csv",
    )
    print(report.to_text(), end="")


def _cmd_report(args) -> None:
    out = _out_dir(args)
    spec, _, labeled = _load_labeled(args)

    eval_matrix = build_features(labeled, spec, mode=args.mode, window_weeks=args.window_weeks, cap=args.cap_seconds)
    reports = [
        repeated_holdout(
            eval_matrix,
            model,
            hyper=_hyper_for(args, model),
            repeats=args.repeats,
            test_fraction=args.test_fraction,
            seed=args.seed,
            threads=args.threads,
            course_id=args.course_id or spec.course_id,
        )
        for model in MODELS
    ]
    table = format_report_table(reports)
    (out / "evaluation.txt").write_text(table)

    # Importances are reported on the aggregate feature view.
    agg = build_features(labeled, spec, mode=AGGREGATE, window_weeks=args.window_weeks, cap=args.cap_seconds)
    balanced = evaluation.oversample(agg, seed=args.seed)
    importances = {}
    for model in MODELS:
        fitted = ensembles.train(
            balanced, model, seed=args.seed,
            threads=args.threads if model == "rf" else 1,
            **_hyper_for(args, model),
        )
        importances[fitted.kind] = ensembles.ensemble_gini_importance(fitted)
    with open(out / "importance.csv", "w") as fh:
        fh.write("learner," + ",".join(agg.columns) + "\n")
        for learner, imp in importances.items():
            fh.write(learner + "," + ",".join(repr(imp[c]) for c in agg.columns) + "\n")
    plots.save_importance_figure(importances, out / "importance.png", title=f"Gini importance ({spec.course_id})")

    stat_report = stats.build_stat_report(labeled, spec, cap=args.cap_seconds, subsample_seed=args.seed)
    stats.save_stat_report(stat_report, json_path=out / "stats.json", medians_csv_path=out / "medians.csv")
    plots.save_median_time_figure(
        stat_report.medians.median_completer,
        stat_report.medians.median_non_completer,
        out / "median_time.png",
        title=f"Median time on step 1.1 ({spec.course_id})",
    )

    _write_json(
        out / "report.json",
        {
            "course_id": spec.course_id,
            "evaluation": [r.to_json_dict() for r in reports],
            "importances": importances,
            "stats": stat_report.to_json_dict(),
        },
    )
    print(table, end="")
    print(stat_report.to_text(), end="")


_DISPATCH = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "features": _cmd_features,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "cv": _cmd_cv,
    "stats": _cmd_stats,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        _validate_common(args)
        _DISPATCH[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
