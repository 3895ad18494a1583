"""Student activity profiles over strategy types, and their clustering.

A profile is the relative frequency of each strategy type across a
student's observed weeks.  Profiles are clustered with complete-linkage
agglomerative clustering under l1; cluster summaries join course grades,
pooled weekly dropout predictions, and coded self-reports (themes plus the
positive/neutral/negative opinion of own effort).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cluster import ClusterAssignment, MergeTree, agglomerative_complete_l1
from .errors import ValidationError
from .strategies import StrategyTypeAssignment

logger = logging.getLogger(__name__)

DEFAULT_K_PROFILES = 5

# Stock display names for the default five profile clusters.
FIVE_PROFILE_NAMES = (
    "Adaptive understanding seekers",
    "Diligent course content followers",
    "Active task-focused learners",
    "Persevering until the end",
    "Course dropouts",
)


@dataclass(frozen=True)
class StudentProfile:
    student: str
    values: np.ndarray       # strategy-type frequencies, sum to 1
    weeks_observed: int

    def __post_init__(self):
        if self.weeks_observed > 0:
            total = float(self.values.sum())
            if abs(total - 1.0) > 1e-9:
                raise ValidationError(f"profile of {self.student} sums to {total}")


@dataclass(frozen=True)
class ThemeCode:
    student: str
    theme: str


@dataclass
class ClusterSummary:
    n_students: int
    median_task_pct: float | None
    median_exam_pct: float | None
    median_grade: float | None
    mean_p_drop: float | None
    majority_themes: tuple[str, ...]
    opinion_counts: dict[str, int]
    n_respondents: int


@dataclass
class ProfileCluster:
    cluster_index: int
    display_name: str
    members: tuple[str, ...]
    summary: ClusterSummary | None = None


def build_profiles(
    assignments: Sequence[StrategyTypeAssignment], n_types: int
) -> list[StudentProfile]:
    """Per-student frequency of strategy types over observed weeks.

    Students with zero observed weeks cannot be profiled; they are skipped
    with a warning rather than emitted as zero vectors.
    """
    per_student: dict[str, list[int]] = {}
    for a in assignments:
        per_student.setdefault(a.student, []).append(a.type_id)
    profiles = []
    for student in sorted(per_student):
        types = per_student[student]
        if not types:
            logger.warning("student %s has no observed weeks; excluded", student)
            continue
        values = np.zeros(n_types)
        for t in types:
            values[t] += 1.0
        profiles.append(StudentProfile(student, values / len(types), len(types)))
    return profiles


@dataclass(frozen=True)
class GradeRecord:
    student: str
    task_pct_before: float
    task_pct_after: float
    exam_pct: float
    grade: float


def grades_from_csv(text: str) -> dict[str, GradeRecord]:
    out = {}
    for row in csv.DictReader(io.StringIO(text)):
        out[row["student"]] = GradeRecord(
            student=row["student"],
            task_pct_before=float(row["task_pct_before"]),
            task_pct_after=float(row["task_pct_after"]),
            exam_pct=float(row["exam_pct"]),
            grade=float(row["grade"]),
        )
    return out


def grades_to_csv(records: Sequence[GradeRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student", "task_pct_before", "task_pct_after", "exam_pct", "grade"])
    for r in records:
        w.writerow([r.student, repr(r.task_pct_before), repr(r.task_pct_after),
                    repr(r.exam_pct), repr(r.grade)])
    return buf.getvalue()


def themes_from_csv(text: str) -> list[ThemeCode]:
    return [ThemeCode(row["student"], row["theme"])
            for row in csv.DictReader(io.StringIO(text))]


def opinions_from_csv(text: str) -> dict[str, str]:
    return {row["student"]: row["opinion"] for row in csv.DictReader(io.StringIO(text))}


def _median(values: list[float]) -> float | None:
    return float(np.median(values)) if values else None


def summarize_cluster(
    members: Sequence[str],
    grades: Mapping[str, GradeRecord],
    strategy_assignments: Sequence[StrategyTypeAssignment],
    themes: Sequence[ThemeCode],
    opinions: Mapping[str, str],
) -> ClusterSummary:
    """Join grades, pooled weekly risk, and self-reports for one cluster.

    Majority themes are those mentioned by at least half of the cluster's
    respondents (ceil(answerers/2)); opinion counts include only members
    with a recorded opinion.
    """
    member_set = set(members)
    grade_rows = [grades[s] for s in members if s in grades]
    pooled_p = [a.p_drop for a in strategy_assignments if a.student in member_set]

    respondents = {t.student for t in themes if t.student in member_set}
    respondents |= {s for s in opinions if s in member_set}
    theme_counts: dict[str, int] = {}
    for t in themes:
        if t.student in member_set:
            theme_counts[t.theme] = theme_counts.get(t.theme, 0) + 1
    majority = ()
    if respondents:
        need = math.ceil(len(respondents) / 2)
        majority = tuple(sorted(
            th for th, c in theme_counts.items() if c >= need
        ))
    opinion_counts = {"positive": 0, "neutral": 0, "negative": 0}
    for s in members:
        op = opinions.get(s)
        if op in opinion_counts:
            opinion_counts[op] += 1
    return ClusterSummary(
        n_students=len(members),
        median_task_pct=_median([g.task_pct_after for g in grade_rows]),
        median_exam_pct=_median([g.exam_pct for g in grade_rows]),
        median_grade=_median([g.grade for g in grade_rows]),
        mean_p_drop=float(np.mean(pooled_p)) if pooled_p else None,
        majority_themes=majority,
        opinion_counts=opinion_counts,
        n_respondents=len(respondents),
    )


def cluster_profiles(
    profiles: Sequence[StudentProfile],
    k: int = DEFAULT_K_PROFILES,
    grades: Mapping[str, GradeRecord] | None = None,
    strategy_assignments: Sequence[StrategyTypeAssignment] = (),
    themes: Sequence[ThemeCode] = (),
    opinions: Mapping[str, str] | None = None,
) -> tuple[list[ProfileCluster], MergeTree, ClusterAssignment]:
    """Cluster profiles with complete-linkage l1 and summarize each cluster."""
    if len(profiles) < k:
        raise ValidationError(f"need at least k={k} profiles, got {len(profiles)}")
    X = np.stack([p.values for p in profiles])
    assignment, tree = agglomerative_complete_l1(X, k)
    clusters = []
    for ci in range(k):
        members = tuple(p.student for p, lab in zip(profiles, assignment.labels)
                        if lab == ci)
        name = (FIVE_PROFILE_NAMES[ci] if k == len(FIVE_PROFILE_NAMES)
                else f"Profile {ci + 1}")
        summary = None
        if grades is not None:
            summary = summarize_cluster(
                members, grades, strategy_assignments, themes, opinions or {}
            )
        clusters.append(ProfileCluster(ci, name, members, summary))
    return clusters, tree, assignment


def profiles_to_csv(profiles: Sequence[StudentProfile], type_names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student", "weeks_observed", *type_names])
    for p in profiles:
        w.writerow([p.student, p.weeks_observed, *(repr(float(v)) for v in p.values)])
    return buf.getvalue()


def clusters_to_csv(clusters: Sequence[ProfileCluster],
                    labels_by_student: Mapping[str, int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student", "cluster", "cluster_name"])
    for c in clusters:
        for s in c.members:
            w.writerow([s, c.cluster_index, c.display_name])
    return buf.getvalue()
