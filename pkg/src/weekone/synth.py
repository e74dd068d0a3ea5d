"""Deterministic synthetic-cohort generation.

Stands in for a real MOOC activity export: every learner draws a completion
class from the prior, visits week-1 steps with class-conditional Poisson
counts and log-normal dwell times, and then receives later-week visits that
force total step coverage to agree with the drawn label (>= 80% of distinct
steps for completers, below for non-completers).  Class-conditional
behaviour therefore lives inside the first-week feature window, while the
coverage bookkeeping lives outside it, so setting both classes' rates equal
produces a cohort with no recoverable signal.

Everything is a pure function of the seed: learner i draws from the RNG
stream (seed, i), and output ordering follows learner index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .cohort import (
    SECONDS_PER_WEEK,
    CourseSpec,
    StepActivity,
    parse_timestamp,
    save_course_spec,
    write_activity_csv,
)
from .errors import ConfigError
from .rng import derive_rng

_BASE_START = parse_timestamp("2015-01-05T00:00:00Z")
_RUN_SPACING = 120 * 86400  # seconds between run starts


@dataclass(frozen=True)
class SynthConfig:
    """Cohort shape and the planted class-conditional behaviour.

    Pair fields are (non-completer, completer).  ``visit_rate`` is the mean
    Poisson visit count per week-1 step; ``duration_median`` the log-normal
    dwell-time median in seconds.  ``noise`` is the fraction of learners
    whose behaviour is drawn from the opposite class (labels and coverage
    stay with the drawn class, so labeling remains consistent).
    """

    learners: int = 5000
    completer_prior: float = 0.146
    weeks: int = 4
    steps_per_week: int = 5
    runs: int = 2
    visit_rate: tuple = (1.5, 3.0)
    duration_median: tuple = (180.0, 360.0)
    duration_sigma: float = 1.0
    quiz: Optional[tuple] = None  # per-class correct-answer rate, or None for a quiz-free course
    noise: float = 0.02
    seed: int = 0
    course_id: str = "synthetic"

    def __post_init__(self):
        if self.learners < 1:
            raise ConfigError("learners must be >= 1")
        if not 0.0 < self.completer_prior < 1.0:
            raise ConfigError("completer_prior must lie in (0, 1)")
        if self.weeks < 1 or self.steps_per_week < 1 or self.runs < 1:
            raise ConfigError("weeks, steps_per_week and runs must be >= 1")
        if min(self.visit_rate) <= 0 or min(self.duration_median) <= 0:
            raise ConfigError("visit rates and duration medians must be positive")
        if self.duration_sigma < 0:
            raise ConfigError("duration_sigma must be nonnegative")
        if not 0.0 <= self.noise < 0.5:
            raise ConfigError("noise must lie in [0, 0.5)")
        if self.quiz is not None and not all(0.0 <= q <= 1.0 for q in self.quiz):
            raise ConfigError("quiz correct-rates must lie in [0, 1]")
        total = self.weeks * self.steps_per_week
        ceil80 = math.ceil(0.8 * total)
        if ceil80 < 2 or self.steps_per_week > ceil80 - 1:
            raise ConfigError(
                "coverage constraints are infeasible: too few steps outside the"
                " first week to separate completers from non-completers"
            )

    @property
    def total_steps(self) -> int:
        return self.weeks * self.steps_per_week

    @property
    def completion_cutoff(self) -> int:
        """Minimum distinct-step count that labels a learner a completer."""
        return math.ceil(0.8 * self.total_steps)


@dataclass
class SynthCohort:
    activities: list  # StepActivity rows, absolute timestamps
    course_spec: CourseSpec
    labels: list  # (learner_id, label), learner order


def _course_spec(config: SynthConfig) -> CourseSpec:
    runs = tuple((r, _BASE_START + (r - 1) * _RUN_SPACING) for r in range(1, config.runs + 1))
    steps = tuple((w, s) for w in range(1, config.weeks + 1) for s in range(1, config.steps_per_week + 1))
    return CourseSpec(course_id=config.course_id, runs=runs, weeks=config.weeks, steps=steps)


def generate_cohort(config: SynthConfig) -> SynthCohort:
    """Generate an activity stream, its course spec, and ground-truth labels.

    The output round-trips losslessly through the activity CSV schema
    (whole-second timestamps), and feeding it through merge_runs and
    filter_and_label reproduces the returned labels exactly.
    """
    spec = _course_spec(config)
    run_starts = spec.run_starts
    s1 = config.steps_per_week
    total = config.total_steps
    cutoff = config.completion_cutoff
    later_steps = [(w, s) for w, s in spec.steps if w > 1]
    quiz_step = config.steps_per_week  # last step of each week hosts the quiz

    activities = []
    labels = []
    for i in range(config.learners):
        rng = derive_rng(config.seed, i)
        learner_id = f"L{i:06d}"
        run = (i % config.runs) + 1
        start = run_starts[run]

        label = 1 if rng.random() < config.completer_prior else 0
        behaviour = label
        if config.noise > 0.0 and rng.random() < config.noise:
            behaviour = 1 - label
        rate = config.visit_rate[behaviour]
        mu = math.log(config.duration_median[behaviour])

        counts = rng.poisson(rate, size=s1)
        visited = [s for s in range(s1) if counts[s] > 0]
        # Experienceable coverage floor: completers must be able to reach the
        # cutoff through later-week steps; everyone visits something in week 1.
        min_week1 = max(1, cutoff - (total - s1)) if label == 1 else 1
        if len(visited) < min_week1:
            unvisited = [s for s in range(s1) if counts[s] == 0]
            bump = rng.choice(len(unvisited), size=min_week1 - len(visited), replace=False)
            for j in sorted(int(b) for b in bump):
                counts[unvisited[j]] = 1

        rows = []
        for s in range(s1):
            for _ in range(int(counts[s])):
                offset = int(rng.integers(0, SECONDS_PER_WEEK))
                duration = max(1, int(round(rng.lognormal(mu, config.duration_sigma))))
                correct = wrong = None
                if config.quiz is not None and s + 1 == quiz_step:
                    correct = int(rng.random() < config.quiz[behaviour])
                    wrong = 1 - correct
                rows.append(
                    StepActivity(
                        learner_id=learner_id,
                        course_id=config.course_id,
                        run=run,
                        week_number=1,
                        step_number=s + 1,
                        visit_start=start + offset,
                        visit_end=start + offset + duration,
                        quiz_correct=correct,
                        quiz_wrong=wrong,
                    )
                )

        week1_distinct = sum(1 for s in range(s1) if counts[s] > 0)
        if label == 1:
            target = int(rng.integers(cutoff, total + 1))
            target = min(target, week1_distinct + len(later_steps))
        else:
            target = int(rng.integers(1, cutoff))
            target = min(max(target, week1_distinct), week1_distinct + len(later_steps))
        need = target - week1_distinct
        if need > 0:
            chosen = rng.choice(len(later_steps), size=need, replace=False)
            for j in sorted(int(c) for c in chosen):
                week, step = later_steps[j]
                offset = (week - 1) * SECONDS_PER_WEEK + int(rng.integers(0, SECONDS_PER_WEEK))
                duration = max(1, int(round(rng.lognormal(mu, config.duration_sigma))))
                rows.append(
                    StepActivity(
                        learner_id=learner_id,
                        course_id=config.course_id,
                        run=run,
                        week_number=week,
                        step_number=step,
                        visit_start=start + offset,
                        visit_end=start + offset + duration,
                    )
                )

        rows.sort(key=lambda a: (a.visit_start, a.week_number, a.step_number))
        activities.extend(rows)
        labels.append((learner_id, label))

    return SynthCohort(activities=activities, course_spec=spec, labels=labels)


def write_cohort(cohort: SynthCohort, out_dir) -> dict:
    """Write activity.csv, course_spec.json and labels.csv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "activity": out / "activity.csv",
        "course_spec": out / "course_spec.json",
        "labels": out / "labels.csv",
    }
    write_activity_csv(cohort.activities, paths["activity"])
    save_course_spec(cohort.course_spec, paths["course_spec"])
    with open(paths["labels"], "w") as fh:
        fh.write("learner_id,label\n")
        for learner_id, label in cohort.labels:
            fh.write(f"{learner_id},{label}\n")
    return paths
