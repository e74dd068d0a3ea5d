"""Step-activity ingestion, run merging, completion labeling, and week-1 features.

The pipeline is: parse an activity CSV against a course spec, merge course
runs onto a shared relative clock, drop zero-activity enrollees, label
completion by step coverage, then build a learner x feature matrix from the
first-week window in either aggregate (4 columns) or per-step mode.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, ParseError, SchemaError

SECONDS_PER_WEEK = 7 * 24 * 3600

DEFAULT_COMPLETION_THRESHOLD = 0.8
DEFAULT_DURATION_CAP = 3600.0

AGGREGATE = "aggregate"
PER_STEP = "per-step"
FEATURE_MODES = (AGGREGATE, PER_STEP)

AGGREGATE_COLUMNS = ["number_of_accesses", "time_spent", "correct_answers", "wrong_answers"]

ACTIVITY_CSV_HEADER = [
    "learner_id",
    "course_id",
    "run",
    "week_number",
    "step_number",
    "visit_start",
    "visit_end",
    "quiz_correct",
    "quiz_wrong",
]


@dataclass(frozen=True)
class StepActivity:
    """One learner visit to one course step.

    Timestamps are seconds: absolute UTC epoch seconds as parsed, or
    run-relative offsets after :func:`merge_runs`.
    """

    learner_id: str
    course_id: str
    run: int
    week_number: int
    step_number: int
    visit_start: float
    visit_end: Optional[float] = None
    quiz_correct: Optional[int] = None
    quiz_wrong: Optional[int] = None

    def __post_init__(self):
        if self.run < 1:
            raise ValueError("run must be a positive integer")
        if self.week_number < 1 or self.step_number < 1:
            raise ValueError("week_number and step_number must be >= 1")
        if self.visit_end is not None and self.visit_end < self.visit_start:
            raise ValueError("visit_end precedes visit_start")
        for q in (self.quiz_correct, self.quiz_wrong):
            if q is not None and q < 0:
                raise ValueError("quiz counts must be nonnegative")


@dataclass(frozen=True)
class CourseSpec:
    """Course structure: runs, week count, and the (week, step) layout."""

    course_id: str
    runs: tuple  # of (run_id, start_epoch_seconds)
    weeks: int
    steps: tuple  # of (week_number, step_number)

    def __post_init__(self):
        if not self.runs:
            raise ValueError("a course spec needs at least one run")
        run_ids = [r for r, _ in self.runs]
        if len(set(run_ids)) != len(run_ids):
            raise ValueError("run ids must be unique")
        if len(set(self.steps)) != len(self.steps):
            raise ValueError("(week, step) pairs must be unique")
        if not self.steps:
            raise ValueError("a course spec needs at least one step")
        if self.weeks != max(w for w, _ in self.steps):
            raise ValueError("weeks must match the maximum week_number in steps")

    @property
    def step_set(self) -> frozenset:
        return frozenset(self.steps)

    @property
    def run_starts(self) -> dict:
        return dict(self.runs)

    def steps_in_window(self, window_weeks: int) -> list:
        return sorted(s for s in self.steps if s[0] <= window_weeks)


@dataclass(frozen=True)
class LearnerTimeline:
    """One learner's nonempty activity stream, sorted by visit start."""

    learner_id: str
    run: int
    activities: tuple

    def __post_init__(self):
        if not self.activities:
            raise ValueError("a timeline must hold at least one activity")


@dataclass(frozen=True)
class CompletionLabel:
    label: int
    coverage: float

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")


@dataclass
class FeatureMatrix:
    """Learners x features with aligned binary labels.

    Absent activity encodes as 0, so there are no missing cells; all values
    are nonnegative counts or seconds.
    """

    columns: list
    X: np.ndarray
    y: np.ndarray
    mode: str
    learner_keys: list  # of (learner_id, run), parallel to rows

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D")
        if len(self.columns) != self.X.shape[1]:
            raise ValueError("column names must match the feature count")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        if self.y.shape[0] != self.X.shape[0]:
            raise ValueError("labels are not aligned with rows")
        if len(self.learner_keys) != self.X.shape[0]:
            raise ValueError("learner keys are not aligned with rows")
        if np.isnan(self.X).any():
            raise ValueError("feature matrix must have no missing cells")
        if self.X.size and self.X.min() < 0:
            raise ValueError("feature values must be nonnegative")
        if self.mode not in FEATURE_MODES:
            raise ValueError(f"unknown feature mode: {self.mode!r}")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def subset(self, indices) -> "FeatureMatrix":
        idx = np.asarray(indices, dtype=int)
        return FeatureMatrix(
            columns=list(self.columns),
            X=self.X[idx],
            y=self.y[idx],
            mode=self.mode,
            learner_keys=[self.learner_keys[i] for i in idx],
        )

    def class_counts(self) -> dict:
        return {0: int((self.y == 0).sum()), 1: int((self.y == 1).sum())}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["learner_id", "run"] + list(self.columns) + ["label"])
            for key, row, label in zip(self.learner_keys, self.X, self.y):
                writer.writerow([key[0], key[1]] + [repr(float(v)) for v in row] + [int(label)])

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["learner_id", "run"] or header[-1] != "label":
                raise SchemaError(f"{path}: not a feature matrix CSV")
            columns = header[2:-1]
            keys, rows, labels = [], [], []
            for rec in reader:
                keys.append((rec[0], int(rec[1])))
                rows.append([float(v) for v in rec[2:-1]])
                labels.append(int(rec[-1]))
        mode = AGGREGATE if columns == AGGREGATE_COLUMNS else PER_STEP
        X = np.asarray(rows, dtype=float).reshape(len(rows), len(columns))
        return cls(columns=columns, X=X, y=np.asarray(labels), mode=mode, learner_keys=keys)

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "columns": list(self.columns),
            "learner_keys": [[k, r] for k, r in self.learner_keys],
            "rows": [[float(v) for v in row] for row in self.X],
            "labels": [int(v) for v in self.y],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "FeatureMatrix":
        return cls(
            columns=list(data["columns"]),
            X=np.asarray(data["rows"], dtype=float).reshape(len(data["rows"]), len(data["columns"])),
            y=np.asarray(data["labels"]),
            mode=data["mode"],
            learner_keys=[(k, int(r)) for k, r in data["learner_keys"]],
        )


def parse_timestamp(text: str) -> float:
    """ISO-8601 -> UTC epoch seconds; naive stamps are taken as UTC."""
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(seconds: float) -> str:
    dt = datetime.fromtimestamp(seconds, tz=timezone.utc)
    if dt.microsecond == 0:
        return dt.strftime("%Y-%m-%dT%H:%M:%SZ")
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _optional_int(text: str, line_number: int, what: str) -> Optional[int]:
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"bad {what}: {text!r}", line_number) from None


def parse_activity_log(path, spec: CourseSpec) -> list:
    """Read an activity CSV into StepActivity rows, validated against spec.

    Raises ParseError (with line number) for malformed rows, SchemaError for
    steps or courses the spec does not define, and OSError for unreadable
    files.
    """
    activities = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ACTIVITY_CSV_HEADER:
            raise SchemaError(f"{path}: header does not match the activity CSV schema")
        for line_number, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(ACTIVITY_CSV_HEADER):
                raise ParseError(f"expected {len(ACTIVITY_CSV_HEADER)} fields, got {len(rec)}", line_number)
            learner_id, course_id, run, week, step, start, end, qc, qw = rec
            if course_id != spec.course_id:
                raise SchemaError(f"line {line_number}: unknown course {course_id!r}")
            try:
                run_i = int(run)
                week_i = int(week)
                step_i = int(step)
                start_s = parse_timestamp(start)
                end_s = None if end == "" else parse_timestamp(end)
            except ParseError:
                raise
            except ValueError as exc:
                raise ParseError(str(exc), line_number) from None
            if (week_i, step_i) not in spec.step_set:
                raise SchemaError(f"line {line_number}: step {week_i}.{step_i} is not in the course spec")
            try:
                activity = StepActivity(
                    learner_id=learner_id,
                    course_id=course_id,
                    run=run_i,
                    week_number=week_i,
                    step_number=step_i,
                    visit_start=start_s,
                    visit_end=end_s,
                    quiz_correct=_optional_int(qc, line_number, "quiz_correct"),
                    quiz_wrong=_optional_int(qw, line_number, "quiz_wrong"),
                )
            except ValueError as exc:
                raise ParseError(str(exc), line_number) from None
            activities.append(activity)
    return activities


def write_activity_csv(activities: Iterable[StepActivity], path) -> None:
    """Emit rows in the activity CSV schema (absolute timestamps expected)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ACTIVITY_CSV_HEADER)
        for a in activities:
            writer.writerow(
                [
                    a.learner_id,
                    a.course_id,
                    a.run,
                    a.week_number,
                    a.step_number,
                    format_timestamp(a.visit_start),
                    "" if a.visit_end is None else format_timestamp(a.visit_end),
                    "" if a.quiz_correct is None else a.quiz_correct,
                    "" if a.quiz_wrong is None else a.quiz_wrong,
                ]
            )


def _activity_sort_key(a: StepActivity):
    return (a.visit_start, a.week_number, a.step_number)


def merge_runs(activities: Iterable[StepActivity], spec: CourseSpec) -> dict:
    """Re-timestamp activities relative to their run start and group them.

    Returns {(learner_id, run): [StepActivity with offset timestamps]}.
    Learner identities stay distinct across runs; the same id in two runs is
    two keys.
    """
    starts = spec.run_starts
    merged: dict = {}
    for a in activities:
        if a.run not in starts:
            raise SchemaError(f"run {a.run} is not in the course spec")
        start = starts[a.run]
        shifted = StepActivity(
            learner_id=a.learner_id,
            course_id=a.course_id,
            run=a.run,
            week_number=a.week_number,
            step_number=a.step_number,
            visit_start=a.visit_start - start,
            visit_end=None if a.visit_end is None else a.visit_end - start,
            quiz_correct=a.quiz_correct,
            quiz_wrong=a.quiz_wrong,
        )
        merged.setdefault((a.learner_id, a.run), []).append(shifted)
    for rows in merged.values():
        rows.sort(key=_activity_sort_key)
    return merged


def filter_and_label(
    merged: Mapping,
    spec: CourseSpec,
    threshold: float = DEFAULT_COMPLETION_THRESHOLD,
) -> list:
    """Drop zero-activity learners and label completion by step coverage.

    Coverage is the fraction of distinct course steps (over the whole
    course) the learner ever accessed; label is 1 iff coverage >= threshold.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigError("completion threshold must lie in (0, 1]")
    total_steps = len(spec.steps)
    out = []
    for key in sorted(merged):
        rows = merged[key]
        if not rows:
            continue
        learner_id, run = key
        timeline = LearnerTimeline(
            learner_id=learner_id,
            run=run,
            activities=tuple(sorted(rows, key=_activity_sort_key)),
        )
        coverage = len({(a.week_number, a.step_number) for a in rows}) / total_steps
        label = CompletionLabel(label=1 if coverage >= threshold else 0, coverage=coverage)
        out.append((timeline, label))
    return out


def derive_time_spent(timeline: LearnerTimeline, cap: float = DEFAULT_DURATION_CAP) -> list:
    """Per-visit durations: explicit span, else capped gap to the next visit.

    A final visit with neither an end stamp nor a successor gets the median
    of the learner's already-derived durations, or the cap when there are
    none.  Gap-derived durations lie in [0, cap].
    """
    acts = timeline.activities
    out = []
    known: list = []
    for i, a in enumerate(acts):
        if a.visit_end is not None:
            d = a.visit_end - a.visit_start
        elif i + 1 < len(acts):
            d = min(acts[i + 1].visit_start - a.visit_start, cap)
        else:
            d = statistics.median(known) if known else cap
        d = float(d)
        out.append((a, d))
        known.append(d)
    return out


def step_column_names(week: int, step: int) -> tuple:
    return (f"acc_{week}.{step}", f"time_{week}.{step}")


def build_features(
    labeled: Sequence,
    spec: CourseSpec,
    mode: str = PER_STEP,
    window_weeks: int = 1,
    cap: float = DEFAULT_DURATION_CAP,
) -> FeatureMatrix:
    """Build the learner x feature matrix from the first window_weeks weeks.

    Only activities with relative offset in [0, window_weeks * 604800)
    contribute.  Per-step mode emits acc_<w>.<s> and time_<w>.<s> for every
    in-window step of the spec; aggregate mode emits exactly the four
    columns number_of_accesses, time_spent, correct_answers, wrong_answers.
    """
    if mode not in FEATURE_MODES:
        raise ConfigError(f"unknown feature mode: {mode!r}")
    if window_weeks < 1:
        raise ConfigError("window_weeks must be >= 1")
    if window_weeks > spec.weeks:
        raise ConfigError(f"window of {window_weeks} weeks exceeds the {spec.weeks}-week course")

    horizon = window_weeks * SECONDS_PER_WEEK
    if mode == PER_STEP:
        window_steps = spec.steps_in_window(window_weeks)
        columns = [name for ws in window_steps for name in step_column_names(*ws)]
        col_index = {ws: 2 * i for i, ws in enumerate(window_steps)}
    else:
        columns = list(AGGREGATE_COLUMNS)

    X = np.zeros((len(labeled), len(columns)))
    y = np.zeros(len(labeled), dtype=int)
    keys = []
    for r, (timeline, label) in enumerate(labeled):
        keys.append((timeline.learner_id, timeline.run))
        y[r] = label.label
        for activity, duration in derive_time_spent(timeline, cap=cap):
            if not 0 <= activity.visit_start < horizon:
                continue
            if mode == PER_STEP:
                base = col_index[(activity.week_number, activity.step_number)]
                X[r, base] += 1.0
                X[r, base + 1] += duration
            else:
                X[r, 0] += 1.0
                X[r, 1] += duration
                X[r, 2] += activity.quiz_correct or 0
                X[r, 3] += activity.quiz_wrong or 0
    return FeatureMatrix(columns=columns, X=X, y=y, mode=mode, learner_keys=keys)


def load_course_spec(path) -> CourseSpec:
    """Read the course spec config file (JSON)."""
    with open(path) as fh:
        data = json.load(fh)
    try:
        runs = tuple((int(r["run"]), parse_timestamp(r["start"])) for r in data["runs"])
        steps = tuple((int(s["week"]), int(s["step"])) for s in data["steps"])
        return CourseSpec(course_id=data["course_id"], runs=runs, weeks=int(data["weeks"]), steps=steps)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: bad course spec ({exc})") from None


def save_course_spec(spec: CourseSpec, path) -> None:
    data = {
        "course_id": spec.course_id,
        "weeks": spec.weeks,
        "runs": [{"run": r, "start": format_timestamp(s)} for r, s in spec.runs],
        "steps": [{"week": w, "step": s} for w, s in spec.steps],
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
