"""Weekly dropout-risk prediction from task-performance data.

One regularized logistic model is trained per course week on cumulative
submission features, labeled by final course outcome.  Predictions are
probabilities in [0, 1]; each prediction decomposes exactly into a baseline
(the expected logit at the week's training-set feature means) plus one
additive contribution per feature, which for a linear logit equals the
Shapley attribution under mean imputation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .ingest import UTC, CourseCalendar

CATEGORIES = ("intro", "basic", "core", "bonus", "guru", "supplementary")

FEATURE_NAMES = (
    "core_completion",       # fraction of core tasks (weeks 1..w) completed
    "basic_completion",      # fraction of basic tasks completed
    "points_fraction",       # fraction of available weekly-task points earned
    "log_submissions",       # log1p of the cumulative submission count
    "correct_ratio",         # correct submissions / all submissions
)


@dataclass(frozen=True)
class SubmissionRecord:
    timestamp: datetime
    student: str
    week_index: int
    task_id: str
    category: str
    correct: bool

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown task category {self.category!r}")


@dataclass(frozen=True)
class CoursePlan:
    """Number of offered tasks per (week, category); every task is one point."""

    tasks: Mapping[int, Mapping[str, int]]

    def count(self, week: int, category: str) -> int:
        return int(self.tasks.get(week, {}).get(category, 0))

    def cumulative(self, through_week: int, category: str) -> int:
        return sum(self.count(w, category) for w in range(1, through_week + 1))

    def cumulative_all(self, through_week: int) -> int:
        return sum(self.cumulative(through_week, c) for c in CATEGORIES)

    def to_json(self) -> str:
        doc = {str(w): dict(cats) for w, cats in sorted(self.tasks.items())}
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CoursePlan":
        doc = json.loads(text)
        return cls({int(w): {c: int(n) for c, n in cats.items()} for w, cats in doc.items()})


def extract_features(
    submissions: Sequence[SubmissionRecord],
    week_index: int,
    plan: CoursePlan,
    calendar: CourseCalendar,
) -> np.ndarray:
    """Cumulative-through-week feature vector for one student.

    Only submissions with timestamps at or before the week's deadline count.
    Completion fractions are over distinct tasks answered correctly at least
    once; a zero denominator yields a zero fraction.
    """
    deadline = calendar.end_of_week(week_index)
    seen = [s for s in submissions if s.timestamp <= deadline and s.week_index <= week_index]
    completed: set[tuple[int, str, str]] = set()
    n_sub = 0
    n_correct = 0
    for s in seen:
        n_sub += 1
        if s.correct:
            n_correct += 1
            completed.add((s.week_index, s.category, s.task_id))

    def completion(category: str) -> float:
        avail = plan.cumulative(week_index, category)
        if avail == 0:
            return 0.0
        done = sum(1 for w, c, _ in completed if c == category)
        return min(done, avail) / avail

    avail_all = plan.cumulative_all(week_index)
    points = min(len(completed), avail_all) / avail_all if avail_all else 0.0
    return np.array([
        completion("core"),
        completion("basic"),
        points,
        math.log1p(n_sub),
        n_correct / n_sub if n_sub else 0.0,
    ])


@dataclass
class WeekModel:
    weights: np.ndarray
    intercept: float
    feature_means: np.ndarray
    converged: bool
    iterations: int


@dataclass
class RiskModel:
    """Per-week logistic coefficients plus the baselines explanations need."""

    weeks: dict[int, WeekModel]
    seed: int
    l2: float
    label_policy: str = "final-course-outcome"

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "l2": self.l2,
            "label_policy": self.label_policy,
            "feature_names": list(FEATURE_NAMES),
            "weeks": {
                str(w): {
                    "weights": [repr(float(v)) for v in m.weights],
                    "intercept": repr(float(m.intercept)),
                    "feature_means": [repr(float(v)) for v in m.feature_means],
                    "converged": m.converged,
                    "iterations": m.iterations,
                }
                for w, m in sorted(self.weeks.items())
            },
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RiskModel":
        doc = json.loads(text)
        weeks = {}
        for w, m in doc["weeks"].items():
            weeks[int(w)] = WeekModel(
                weights=np.array([float(v) for v in m["weights"]]),
                intercept=float(m["intercept"]),
                feature_means=np.array([float(v) for v in m["feature_means"]]),
                converged=bool(m["converged"]),
                iterations=int(m["iterations"]),
            )
        return cls(weeks=weeks, seed=int(doc["seed"]), l2=float(doc["l2"]),
                   label_policy=doc.get("label_policy", "final-course-outcome"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path: str | Path) -> "RiskModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


def _nll(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2: float) -> float:
    z = X @ w + b
    # log(1 + exp(z)) - y*z, computed stably
    softplus = np.where(z > 0, z + np.log1p(np.exp(-z)), np.log1p(np.exp(z)))
    return float((softplus - y * z).mean() + 0.5 * l2 * (w @ w))


def _fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    l2: float,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, float, bool, int]:
    """Batch gradient descent with step halving; intercept unpenalized.

    The mean-based objective makes the fit invariant to duplicating every
    training row; the objective never increases across iterations.
    """
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    obj = _nll(X, y, w, b, l2)
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        p = _sigmoid(X @ w + b)
        err = p - y
        gw = X.T @ err / n + l2 * w
        gb = float(err.mean())
        gnorm = max(np.abs(gw).max(initial=0.0), abs(gb))
        if gnorm < tol:
            converged = True
            break
        lr = 1.0
        while lr > 1e-15:
            nw, nb = w - lr * gw, b - lr * gb
            nobj = _nll(X, y, nw, nb, l2)
            if nobj <= obj:
                w, b, obj = nw, nb, nobj
                break
            lr *= 0.5
        else:
            converged = True  # no representable step improves the objective
            break
    return w, b, converged, iterations


def train(
    history: Mapping[int, tuple[np.ndarray, np.ndarray]],
    seed: int = 0,
    l2: float = 1e-3,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> RiskModel:
    """Fit one logistic model per week from (features, labels) training slices.

    ``history[week] = (X, y)`` with y in {0: passed, 1: dropped}.  A week
    whose slice contains a single class is an error naming that week.
    """
    weeks: dict[int, WeekModel] = {}
    for week in sorted(history):
        X, y = history[week]
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        classes = np.unique(y)
        if len(classes) < 2:
            raise ValidationError(
                f"training slice for week {week} contains a single class ({classes})"
            )
        w, b, converged, iterations = _fit_logistic(X, y, l2, tol, max_iter)
        weeks[week] = WeekModel(
            weights=w,
            intercept=b,
            feature_means=X.mean(axis=0),
            converged=converged,
            iterations=iterations,
        )
    return RiskModel(weeks=weeks, seed=seed, l2=l2)


def predict_week(model: RiskModel, features: np.ndarray, week_index: int) -> float:
    """Dropout probability for one feature vector under the week's model."""
    if week_index not in model.weeks:
        raise ValidationError(f"model has no coefficients for week {week_index}")
    m = model.weeks[week_index]
    z = float(m.weights @ np.asarray(features, dtype=np.float64) + m.intercept)
    return float(_sigmoid(z))


@dataclass(frozen=True)
class Explanation:
    baseline: float                      # expected logit at training means
    contributions: tuple[float, ...]     # one per feature, logit units
    logit: float
    probability: float
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def waterfall_order(self) -> list[int]:
        """Feature indices by descending |contribution| (stable on ties)."""
        order = sorted(
            range(len(self.contributions)),
            key=lambda i: (-abs(self.contributions[i]), i),
        )
        return order


def explain(model: RiskModel, features: np.ndarray, week_index: int) -> Explanation:
    """Exact additive decomposition of the predicted logit.

    contribution_i = weight_i * (feature_i - mean_i); the baseline plus the
    contributions reproduce the logit exactly, and for this linear logit the
    contributions equal the Shapley values under mean imputation.
    """
    if week_index not in model.weeks:
        raise ValidationError(f"model has no coefficients for week {week_index}")
    m = model.weeks[week_index]
    x = np.asarray(features, dtype=np.float64)
    baseline = float(m.intercept + m.weights @ m.feature_means)
    contributions = tuple(float(wi * (xi - mi))
                          for wi, xi, mi in zip(m.weights, x, m.feature_means))
    logit = baseline + math.fsum(contributions)
    return Explanation(
        baseline=baseline,
        contributions=contributions,
        logit=logit,
        probability=float(_sigmoid(logit)),
    )


def roc_auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Rank-based AUC with midranks for tied scores."""
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both classes present")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def submissions_to_csv(records: Sequence[SubmissionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", "student", "week", "task_id", "category", "correct"])
    for r in records:
        ts = r.timestamp.astimezone(UTC)
        stamp = f"{ts:%Y-%m-%dT%H:%M:%S}.{ts.microsecond // 1000:03d}"
        w.writerow([stamp, r.student, r.week_index, r.task_id, r.category,
                    "1" if r.correct else "0"])
    return buf.getvalue()


def submissions_from_csv(text: str) -> list[SubmissionRecord]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        ts = datetime.strptime(row["timestamp"], "%Y-%m-%dT%H:%M:%S.%f").replace(tzinfo=UTC)
        out.append(SubmissionRecord(
            timestamp=ts,
            student=row["student"],
            week_index=int(row["week"]),
            task_id=row["task_id"],
            category=row["category"],
            correct=row["correct"] == "1",
        ))
    return out


def feature_table(
    submissions: Sequence[SubmissionRecord],
    plan: CoursePlan,
    calendar: CourseCalendar,
    students: Sequence[str] | None = None,
    weeks: Sequence[int] | None = None,
) -> dict[tuple[str, int], np.ndarray]:
    """Feature vectors for every (student, week) combination requested."""
    by_student: dict[str, list[SubmissionRecord]] = {}
    for s in submissions:
        by_student.setdefault(s.student, []).append(s)
    if students is None:
        students = sorted(by_student)
    if weeks is None:
        weeks = range(1, calendar.week_count + 1)
    out = {}
    for student in students:
        subs = by_student.get(student, [])
        for week in weeks:
            out[(student, week)] = extract_features(subs, week, plan, calendar)
    return out
