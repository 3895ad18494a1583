"""Synthetic cohort generator with planted ground truth.

Generates raw VLE logs, task submissions, grades, and coded self-reports
from layered archetypes: tactic archetypes (event-code distributions per
session), strategy templates (Markov chains over tactics plus weekly task
behavior), and profile archetypes (per-week template mixtures per student).
Every random choice flows through one seeded generator, so outputs are
byte-identical given the seed.  The planted labels at each layer are the
oracle for recovery tests.

Planted session gaps are clean by construction: gaps inside a session stay
well under the 25-minute split cutoff and gaps between sessions exceed 40
minutes, so sessionization recovery is exact and downstream failures are
isolated.  A week's planted risk class reflects its expected dropout
probability: chronically inactive students and dropouts' decline weeks are
high risk, while a mild first-week experiment by an otherwise strong
student is planted low risk even when its session pattern uses a high-risk
template.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .ingest import UTC, CourseCalendar, EventCodeRegistry
from .profiles import GradeRecord, grades_to_csv
from .risk import CATEGORIES, CoursePlan, SubmissionRecord, submissions_to_csv

MS = timedelta(milliseconds=1)


# ---------------------------------------------------------------------------
# Archetype layers


@dataclass(frozen=True)
class TacticArchetype:
    name: str
    codes: tuple[tuple[str, float], ...]   # (event code, probability)
    length: tuple[int, int]                # events per session, inclusive
    fixed_sequence: tuple[str, ...] | None = None  # overrides sampling


def default_tactic_archetypes() -> tuple[TacticArchetype, ...]:
    t = [
        TacticArchetype("coursebook_examples", (
            ("read:materials-book", 0.40),
            ("answer:materials-book-example", 0.34),
            ("answer-wrong:materials-book-example", 0.14),
            ("read:tasks-cur", 0.12),
        ), (12, 26)),
        TacticArchetype("lecture_engaged", (
            ("read:lecture-cur-wk", 0.44),
            ("answer:lecture-cur-wk-example", 0.28),
            ("answer-wrong:lecture-cur-wk-example", 0.12),
            ("join-lecture:lecture-cur-wk", 0.08),
            ("leave-lecture:lecture-cur-wk", 0.08),
        ), (12, 26)),
        TacticArchetype("lecture_video", (
            ("watch-video:lecture-cur-wk", 0.50),
            ("read:lecture-cur-wk", 0.28),
            ("watch-video:lecture-prev-wk", 0.12),
            ("read:lecture-all", 0.10),
        ), (10, 20)),
        TacticArchetype("intro_tasks", (
            ("answer:tasks-cur-intro", 0.38),
            ("answer-wrong:tasks-cur-intro", 0.18),
            ("read:tasks-cur", 0.32),
            ("read:tasks", 0.12),
        ), (10, 22)),
        TacticArchetype("core_attempt", (
            ("answer-wrong:tasks-cur-core", 0.42),
            ("read:tasks-cur", 0.34),
            ("answer:tasks-cur-core", 0.02),
            ("read:materials-book", 0.22),
        ), (12, 24)),
        TacticArchetype("core_correct", (
            ("answer:tasks-cur-core", 0.36),
            ("read:tasks-cur", 0.34),
            ("answer-wrong:tasks-cur-core", 0.06),
            ("answer:tasks-cur-self-assessment", 0.24),
        ), (12, 24)),
        TacticArchetype("basic_attempt", (
            ("answer-wrong:tasks-cur-basic", 0.42),
            ("read:tasks-cur", 0.34),
            ("answer:tasks-cur-basic", 0.02),
            ("read:materials-book", 0.22),
        ), (12, 24)),
        TacticArchetype("basic_correct", (
            ("answer:tasks-cur-basic", 0.40),
            ("read:tasks-cur", 0.34),
            ("answer-wrong:tasks-cur-basic", 0.06),
            ("answer:tasks-cur-intro", 0.20),
        ), (12, 24)),
        TacticArchetype("extra_tasks", (
            ("read:tasks-extra", 0.30),
            ("read:materials-book", 0.24),
            ("answer:tasks-cur-bonus", 0.18),
            ("answer:tasks-extra-supplementary", 0.12),
            ("answer:tasks-cur-guru", 0.08),
            ("read:tasks-supp", 0.08),
        ), (10, 22)),
        TacticArchetype("ta_session", (
            ("session-start:None", 0.5),
            ("session-end:None", 0.5),
        ), (2, 2), fixed_sequence=("session-start:None", "session-end:None")),
        TacticArchetype("prev_tasks_basic", (
            ("read:tasks-prev", 0.36),
            ("answer:tasks-prev-basic", 0.24),
            ("answer-wrong:tasks-prev-basic", 0.18),
            ("check-model-answer:tasks-prev-basic", 0.22),
        ), (10, 20)),
        TacticArchetype("prev_tasks_deep", (
            ("read:tasks-prev", 0.28),
            ("answer:tasks-prev-core", 0.16),
            ("answer:tasks-prev-intro", 0.12),
            ("check-model-answer:tasks-prev-core", 0.16),
            ("check-model-answer:tasks-prev-intro", 0.12),
            ("read:tasks-review", 0.10),
            ("watch-video:tasks-review-prev", 0.06),
        ), (10, 22)),
    ]
    return tuple(t)


@dataclass(frozen=True)
class StrategyTemplate:
    name: str
    risk: str                          # "low" | "high"
    tactic_mix: tuple[tuple[int, float], ...]
    stickiness: float                  # probability of repeating the last tactic
    sessions: tuple[int, int]          # multi-event sessions per week, inclusive
    completion: tuple[tuple[str, float], ...]  # target completion per category
    wrong_rate: float                  # expected wrong attempts per completed task
    fix_after_course: bool = False     # completes old tasks after the course ends


def default_strategy_templates() -> tuple[StrategyTemplate, ...]:
    t = [
        StrategyTemplate("task_oriented", "low",
                         ((5, 0.34), (7, 0.36), (6, 0.12), (4, 0.10), (3, 0.08)),
                         0.25, (10, 14),
                         (("core", 1.0), ("basic", 0.92), ("intro", 0.88),
                          ("bonus", 0.35), ("guru", 0.12)), 0.35),
        StrategyTemplate("understanding", "low",
                         ((0, 0.36), (8, 0.24), (1, 0.14), (5, 0.14), (7, 0.08),
                          (9, 0.04)),
                         0.25, (11, 15),
                         (("core", 1.0), ("basic", 0.82), ("intro", 0.85),
                          ("bonus", 0.50), ("guru", 0.30)), 0.5),
        StrategyTemplate("resource_focused", "low",
                         ((2, 0.28), (1, 0.26), (10, 0.22), (3, 0.14), (7, 0.10)),
                         0.25, (10, 14),
                         (("core", 0.95), ("basic", 0.72), ("intro", 0.80),
                          ("bonus", 0.15), ("guru", 0.04)), 0.45),
        StrategyTemplate("falling_behind", "high",
                         ((11, 0.66), (8, 0.18), (2, 0.16)),
                         0.25, (8, 13), (), 0.0),
        StrategyTemplate("attempting_examples", "high",
                         ((0, 0.46), (6, 0.34), (3, 0.20)),
                         0.25, (8, 13),
                         (("intro", 0.30), ("core", 0.25), ("basic", 0.15)), 1.4),
        StrategyTemplate("low_engagement", "high",
                         ((1, 0.62), (2, 0.22), (3, 0.16)),
                         0.25, (8, 12),
                         (("intro", 0.30), ("core", 0.20), ("basic", 0.08)), 0.4),
        StrategyTemplate("late_model_answers", "high",
                         ((10, 0.66), (3, 0.18), (2, 0.16)),
                         0.25, (8, 12),
                         (("core", 0.10), ("intro", 0.15)), 0.3,
                         fix_after_course=True),
        StrategyTemplate("slow_start", "high",
                         ((3, 0.46), (2, 0.30), (6, 0.24)),
                         0.25, (8, 13),
                         (("intro", 0.45), ("core", 0.30), ("basic", 0.20)), 0.8),
        StrategyTemplate("struggling", "high",
                         ((4, 0.34), (1, 0.26), (0, 0.22), (9, 0.18)),
                         0.25, (8, 13),
                         (("intro", 0.40), ("core", 0.30), ("basic", 0.18)), 1.6),
        StrategyTemplate("video_stuck", "high",
                         ((2, 0.78), (8, 0.22)),
                         0.25, (8, 12), (("intro", 0.10),), 0.2),
        StrategyTemplate("browsing", "high",
                         ((8, 0.60), (0, 0.22), (6, 0.18)),
                         0.25, (8, 12),
                         (("intro", 0.20), ("core", 0.08), ("basic", 0.08)), 1.0),
        StrategyTemplate("risky_mandatory", "high",
                         ((4, 0.38), (9, 0.34), (5, 0.14), (2, 0.14)),
                         0.25, (8, 12),
                         (("intro", 0.08),), 0.8,
                         fix_after_course=True),
    ]
    return tuple(t)


# Profile archetypes: per-week distributions over strategy-template ids.
# Ids 0-2 are the low-risk templates, 3-11 the high-risk ones.

_P_ADAPTIVE = {1: [(1, 0.62), (7, 0.20), (8, 0.18)],
               2: [(1, 0.82), (0, 0.10), (8, 0.08)],
               "rest": [(1, 0.86), (0, 0.14)]}
_P_DILIGENT = {1: [(2, 0.66), (5, 0.18), (9, 0.16)],
               2: [(2, 0.84), (1, 0.16)],
               10: [(2, 0.60), (1, 0.40)],
               11: [(2, 0.60), (1, 0.40)],
               "rest": [(2, 0.88), (1, 0.12)]}
_P_TASK = {1: [(0, 0.72), (7, 0.28)],
           "rest": [(0, 0.96), (1, 0.04)]}

# Students with dropout week d stop submitting at week g; the final two
# observed weeks always use the falling-behind template.
DROPOUT_SCHEDULE = ((1, 4), (1, 5), (1, 6), (2, 6), (2, 7), (3, 8), (3, 9))
_DROPOUT_POOLS = ((4, 5), (5, 9), (8, 10), (4, 10), (9, 5), (8, 4), (10, 9))

# Task behavior of a mild early-course slump by an otherwise strong student:
# noticeably reduced but above the risk bar a submission-based predictor uses.
SLIP_COMPLETION = (("intro", 0.78), ("core", 0.72), ("basic", 0.66))

# Task behavior once a dropout's decline begins: a dribble of stray intro
# answers, indistinguishable from the chronically inactive passers.
DECLINE_COMPLETION = (("intro", 0.10),)

# A week is planted high-risk when the expected cumulative completion a
# deadline-based predictor sees has fallen below this fraction.
RISK_COMPLETION_THRESHOLD = 0.45


@dataclass(frozen=True)
class ProfileArchetype:
    name: str
    count: int
    respond_rate: float
    opinion_dist: tuple[tuple[str, float], ...]
    theme_pool: tuple[tuple[str, float], ...]
    exam_mean: float
    exam_sd: float


THEME_VOCABULARY: tuple[tuple[str, str], ...] = (
    ("Course Materials", "The student indicates using the provided course materials."),
    ("Weekly Assignments", "The student reports completing weekly assignments."),
    ("Lecture Participation", "The student reports attending lectures or viewing lecture materials."),
    ("Emphasis on Regularity", "The student highlights the importance of regular study habits."),
    ("Group Sessions", "The student reports attending computer lab sessions."),
    ("Peer Support Groups", "The student reports participating in a guided peer support group."),
    ("Additional Online Materials", "The student reports utilizing supplementary online resources."),
    ("Importance of Acquaintances", "The student emphasizes the role of acquaintances in completing the course."),
    ("Anticipation of Future Challenges", "The student prepares for upcoming topics or difficulties."),
    ("Perceived Course Workload", "The student mentions that the course is labor-intensive."),
    ("Adaptation of Study Methods", "The student adapts study methods to suit their individual needs."),
    ("Work-Induced Study Rhythm", "The student indicates that employment provides structure to their studies."),
    ("Seeking External Help", "The student reports seeking assistance from others to complete assignments."),
    ("Constraints from Other Courses", "The student discusses how other courses limit their focus on this one."),
    ("Externalizing Self-Regulation", "The student relies on others for guidance and regulation."),
    ("Personal Life Constraints", "The student brings up personal life factors that impose constraints."),
    ("Emphasis on Group Work Benefits", "The student underscores the significance of group work."),
    ("Irregular Study Habits", "The student mentions irregularity in their study activities."),
    ("Synchronization of Lectures and Assignments", "The student emphasizes timing between lectures and assignments."),
    ("Challenges in Studying", "The student brings up challenges in studying the course material."),
    ("Deviation from Established Practices", "The student indicates deviating from their usual study practices."),
    ("Work-Related Limitations", "The student mentions employment as a limiting factor."),
    ("Invested Effort", "The student highlights having invested significant effort."),
    ("Preference for Independent Work", "The student prefers to work alone rather than in groups."),
    ("Deadline-Driven Approach", "The student operates primarily based on deadlines."),
    ("Random Study Practices", "The student indicates randomness in their study methods."),
    ("Dependence on Instructors", "The student's progress depends heavily on instructor guidance."),
    ("Lack of Motivation", "The student expresses a lack of motivation regarding the course."),
    ("Library Documentation", "The student reports using library documentation for project work."),
    ("Establishing Routine", "The student creates a routine for course completion."),
    ("Increasing Independence Over Time", "The student notes enhanced self-regulation over the course."),
    ("Deliberate Note-Taking", "The student practices conscious note-taking to enhance learning."),
    ("Low Goal Setting", "The student sets low personal goals for the course."),
    ("Social Aspects of the Course", "The student brings up matters related to social interactions."),
    ("Challenge of Transitioning to University", "The student mentions difficulties transitioning to university-level studies."),
    ("Minimal Effort Invested", "The student notes limited personal investment in the course."),
    ("Concern Over Effort Sufficiency", "The student expresses concern about the adequacy of their effort."),
    ("Adjusting Habits to Course Schedule", "The student adapts habits to the course timetable."),
    ("Awareness of Personal Goals", "The student acknowledges personal goals for the course."),
)


def default_profiles() -> tuple[ProfileArchetype, ...]:
    return (
        ProfileArchetype(
            "adaptive_understanding", 20, 0.65,
            (("positive", 0.55), ("neutral", 0.30), ("negative", 0.15)),
            (("Course Materials", 0.85), ("Weekly Assignments", 0.80),
             ("Lecture Participation", 0.70), ("Emphasis on Regularity", 0.60),
             ("Additional Online Materials", 0.55), ("Group Sessions", 0.50),
             ("Peer Support Groups", 0.50), ("Adaptation of Study Methods", 0.45),
             ("Perceived Course Workload", 0.35), ("Anticipation of Future Challenges", 0.35)),
            0.72, 0.10),
        ProfileArchetype(
            "diligent_followers", 13, 0.60,
            (("positive", 0.30), ("neutral", 0.40), ("negative", 0.30)),
            (("Course Materials", 0.85), ("Group Sessions", 0.80),
             ("Lecture Participation", 0.75), ("Weekly Assignments", 0.70),
             ("Peer Support Groups", 0.60), ("Importance of Acquaintances", 0.50),
             ("Perceived Course Workload", 0.45), ("Seeking External Help", 0.40),
             ("Externalizing Self-Regulation", 0.30)),
            0.62, 0.12),
        ProfileArchetype(
            "task_focused", 5, 0.80,
            (("positive", 0.70), ("neutral", 0.20), ("negative", 0.10)),
            (("Weekly Assignments", 0.90), ("Course Materials", 0.80),
             ("Emphasis on Regularity", 0.70), ("Preference for Independent Work", 0.40),
             ("Invested Effort", 0.40)),
            0.78, 0.08),
        ProfileArchetype(
            "at_risk", 8, 0.0, (("negative", 1.0),), (), 0.0, 0.0),
        ProfileArchetype(
            "outlier_perseverer", 1, 1.0,
            (("negative", 1.0),),
            (("Challenge of Transitioning to University", 1.0),
             ("Deadline-Driven Approach", 1.0), ("Low Goal Setting", 1.0),
             ("Course Materials", 1.0), ("Preference for Independent Work", 1.0)),
            0.95, 0.0),
    )


@dataclass
class ArchetypeSpec:
    weeks: int = 11
    seed: int = 42
    first_week_start: date = date(2023, 9, 4)
    tz: str = "UTC"
    profiles: tuple[ProfileArchetype, ...] = field(default_factory=default_profiles)
    tactics: tuple[TacticArchetype, ...] = field(default_factory=default_tactic_archetypes)
    templates: tuple[StrategyTemplate, ...] = field(default_factory=default_strategy_templates)
    dropout_schedule: tuple[tuple[int, int], ...] = DROPOUT_SCHEDULE
    irrelevant_rate: float = 0.28      # share of raw lines that are course-noise
    single_session_rate: float = 0.30  # single-event sessions per multi session

    @property
    def n_students(self) -> int:
        return sum(p.count for p in self.profiles)

    def to_json(self) -> str:
        return json.dumps({
            "weeks": self.weeks,
            "seed": self.seed,
            "first_week_start": self.first_week_start.isoformat(),
            "tz": self.tz,
            "profile_counts": {p.name: p.count for p in self.profiles},
            "dropout_schedule": [list(p) for p in self.dropout_schedule],
            "irrelevant_rate": self.irrelevant_rate,
            "single_session_rate": self.single_session_rate,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ArchetypeSpec":
        doc = json.loads(text)
        spec = cls(
            weeks=int(doc.get("weeks", 11)),
            seed=int(doc.get("seed", 42)),
            tz=doc.get("tz", "UTC"),
            irrelevant_rate=float(doc.get("irrelevant_rate", 0.28)),
            single_session_rate=float(doc.get("single_session_rate", 0.30)),
        )
        if "first_week_start" in doc:
            spec.first_week_start = date.fromisoformat(doc["first_week_start"])
        if "dropout_schedule" in doc:
            spec.dropout_schedule = tuple(tuple(p) for p in doc["dropout_schedule"])
        if "profile_counts" in doc:
            profiles = []
            for p in spec.profiles:
                n = int(doc["profile_counts"].get(p.name, p.count))
                profiles.append(ProfileArchetype(
                    p.name, n, p.respond_rate, p.opinion_dist, p.theme_pool,
                    p.exam_mean, p.exam_sd))
            spec.profiles = tuple(profiles)
        return spec


def default_plan(weeks: int = 11) -> CoursePlan:
    per_week = {"intro": 3, "basic": 6, "core": 2, "bonus": 3, "guru": 2,
                "supplementary": 0}
    return CoursePlan({w: dict(per_week) for w in range(1, weeks + 1)})


@dataclass
class GroundTruth:
    profile_by_student: dict[str, int]
    dropout_week: dict[str, int | None]
    template_by_week: dict[tuple[str, int], int]
    risk_by_week: dict[tuple[str, int], str]
    p_drop_by_week: dict[tuple[str, int], float]
    tactic_by_session: dict[str, int]   # keyed by "student|start_iso_ms"
    single_event_sessions: int
    irrelevant_lines: int

    def to_json(self) -> str:
        return json.dumps({
            "profile_by_student": dict(sorted(self.profile_by_student.items())),
            "dropout_week": dict(sorted(self.dropout_week.items())),
            "weeks": {
                f"{s}|{w}": {
                    "template": self.template_by_week[(s, w)],
                    "risk": self.risk_by_week[(s, w)],
                    "p_drop": self.p_drop_by_week[(s, w)],
                }
                for s, w in sorted(self.template_by_week)
            },
            "sessions": dict(sorted(self.tactic_by_session.items())),
            "single_event_sessions": self.single_event_sessions,
            "irrelevant_lines": self.irrelevant_lines,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        doc = json.loads(text)
        template, risk, p_drop = {}, {}, {}
        for key, rec in doc["weeks"].items():
            s, w = key.rsplit("|", 1)
            template[(s, int(w))] = int(rec["template"])
            risk[(s, int(w))] = rec["risk"]
            p_drop[(s, int(w))] = float(rec["p_drop"])
        return cls(
            profile_by_student={s: int(p) for s, p in doc["profile_by_student"].items()},
            dropout_week={s: (None if w is None else int(w))
                          for s, w in doc["dropout_week"].items()},
            template_by_week=template,
            risk_by_week=risk,
            p_drop_by_week=p_drop,
            tactic_by_session={k: int(v) for k, v in doc["sessions"].items()},
            single_event_sessions=int(doc["single_event_sessions"]),
            irrelevant_lines=int(doc["irrelevant_lines"]),
        )


# ---------------------------------------------------------------------------
# Raw-action rendering (inverse of the default recode rule table)


def _rel_week(code: str, week: int) -> int:
    parts = code.replace(":", "-").split("-")
    if "prev" in parts:
        return week - 1
    if "next" in parts:
        return week + 1
    return week


def _raw_action(code: str, week: int, rng: np.random.Generator) -> str:
    w = _rel_week(code, week)
    kind, _, rest = code.partition(":")
    if code == "read:materials-book":
        return f"VIEW_DOC/book/ch{int(rng.integers(1, 30))}"
    if code == "read:lecture-all":
        return "VIEW_DOC/lecture/index"
    if code == "read:lecuture-cur":
        return "VIEW_DOC/lecture/live"
    if code.startswith("read:lecture-"):
        return f"VIEW_DOC/lecture/week{w}"
    if code == "read:tasks":
        return "VIEW_TASKS/index"
    if code in ("read:tasks-extra", "read:tasks-pre", "read:tasks-review", "read:tasks-supp"):
        return "VIEW_TASKS/" + rest.split("-", 1)[1]
    if code.startswith("read:tasks-"):
        return f"VIEW_TASKS/week{w}"
    if code.startswith("watch-video:lecture-"):
        return f"WATCH/lecture/week{w}"
    if code.startswith("watch-video:tasks-review-"):
        return f"WATCH/review/week{w}"
    if code in ("answer:materials-book-example", "answer-wrong:materials-book-example"):
        ok = "ok" if kind == "answer" else "fail"
        return f"SUBMIT_EXAMPLE/book/e{int(rng.integers(1, 40))}/{ok}"
    if code.startswith(("answer:lecture-", "answer-wrong:lecture-")):
        ok = "ok" if kind == "answer" else "fail"
        return f"SUBMIT_EXAMPLE/lecture/week{w}/e{int(rng.integers(1, 20))}/{ok}"
    if code.startswith(("answer:tasks-supp", "answer-wrong:tasks-supp")):
        ok = "ok" if kind == "answer" else "fail"
        return f"SUBMIT/supp/t{int(rng.integers(1, 20))}/{ok}"
    if code.startswith(("answer:tasks-extra", "answer-wrong:tasks-extra")):
        ok = "ok" if kind == "answer" else "fail"
        return f"SUBMIT/extra/t{int(rng.integers(1, 20))}/{ok}"
    if code.startswith(("answer:tasks-", "answer-wrong:tasks-")):
        category = rest.split("-")[-1]
        if category == "assessment":
            category = "self-assessment"
        ok = "ok" if kind == "answer" else "fail"
        return f"SUBMIT/week{w}/{category}/t{int(rng.integers(1, 20))}/{ok}"
    if code.startswith("check-model-answer:tasks-"):
        category = rest.split("-")[-1]
        return f"CHECK_ANSWER/week{w}/{category}/t{int(rng.integers(1, 20))}"
    if code.startswith("join-lecture:"):
        return f"LECTURE/join/week{w}"
    if code.startswith("leave-lecture:"):
        return f"LECTURE/leave/week{w}"
    if code == "session-start:None":
        return "SESSION/start"
    if code == "session-end:None":
        return "SESSION/end"
    if code == "workshop-start:None":
        return "WORKSHOP/start"
    if code == "workshop-end:None":
        return "WORKSHOP/end"
    raise ValidationError(f"no raw action known for code {code!r}")


_IRRELEVANT_ACTIONS = (
    "LOGIN", "LOGOUT", "VIEW_PROFILE/self", "PING/health",
    "NAV/dashboard", "SYSTEM/notice", "SETTINGS/theme",
)


def _fmt_raw(ts: datetime, student: str, action: str) -> str:
    stamp = f"{ts:%Y-%m-%d %H:%M:%S},{ts.microsecond // 1000:03d}"
    return f"{stamp} INFO: {student} [127.0.0.1]: {action}"


def _iso_ms(ts: datetime) -> str:
    return f"{ts:%Y-%m-%dT%H:%M:%S}.{ts.microsecond // 1000:03d}"


# ---------------------------------------------------------------------------
# Sequence and session sampling


def sample_tactic_sequence(
    template: StrategyTemplate, n: int, rng: np.random.Generator
) -> list[int]:
    ids = [t for t, _ in template.tactic_mix]
    probs = np.array([p for _, p in template.tactic_mix])
    probs = probs / probs.sum()
    seq = [int(rng.choice(ids, p=probs))]
    for _ in range(n - 1):
        if rng.random() < template.stickiness:
            seq.append(seq[-1])
        else:
            seq.append(int(rng.choice(ids, p=probs)))
    return seq


def _sample_session_codes(
    archetype: TacticArchetype, week: int, rng: np.random.Generator
) -> list[str]:
    if archetype.fixed_sequence is not None:
        return list(archetype.fixed_sequence)
    n = int(rng.integers(archetype.length[0], archetype.length[1] + 1))
    codes = [c for c, _ in archetype.codes]
    probs = np.array([p for _, p in archetype.codes])
    probs = probs / probs.sum()
    return [codes[int(i)] for i in rng.choice(len(codes), size=n, p=probs)]


def sample_session_vectors(
    n: int,
    registry: EventCodeRegistry,
    seed: int = 0,
    archetypes: Sequence[TacticArchetype] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Session frequency vectors drawn directly from the tactic archetypes.

    Mirrors what sessions look like after ingest for a current-week session;
    used as the oracle for tactic-recovery tests.
    """
    if archetypes is None:
        archetypes = default_tactic_archetypes()
    rng = np.random.default_rng(seed)
    X = np.zeros((n, len(registry)))
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        a = int(rng.integers(len(archetypes)))
        labels[i] = a
        for code in _sample_session_codes(archetypes[a], week=2, rng=rng):
            X[i, registry.index(code)] += 1.0
        X[i] /= X[i].sum()
    return X, labels


def sample_template_sequences(
    per_template: int,
    which: Sequence[int],
    seed: int = 0,
    length: tuple[int, int] = (8, 14),
    templates: Sequence[StrategyTemplate] | None = None,
) -> tuple[list[list[int]], np.ndarray]:
    """Tactic sequences per strategy template, for strategy-recovery oracles."""
    if templates is None:
        templates = default_strategy_templates()
    rng = np.random.default_rng(seed)
    seqs: list[list[int]] = []
    labels = []
    for t in which:
        for _ in range(per_template):
            n = int(rng.integers(length[0], length[1] + 1))
            seqs.append(sample_tactic_sequence(templates[t], n, rng))
            labels.append(t)
    return seqs, np.asarray(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# Cohort generation


@dataclass
class GeneratedCohort:
    raw_lines: list[str]
    submissions: list[SubmissionRecord]
    grades: list[GradeRecord]
    themes: list[tuple[str, str]]
    opinions: dict[str, str]
    dropped: dict[str, bool]
    ground_truth: GroundTruth
    calendar: CourseCalendar
    plan: CoursePlan


def _weekly_template_table(profile_name: str) -> dict:
    return {"adaptive_understanding": _P_ADAPTIVE,
            "diligent_followers": _P_DILIGENT,
            "task_focused": _P_TASK}[profile_name]


def _pick(dist: Sequence[tuple], rng: np.random.Generator):
    items = [i for i, _ in dist]
    probs = np.array([p for _, p in dist])
    return items[int(rng.choice(len(items), p=probs / probs.sum()))]


def _plan_student_weeks(
    spec: ArchetypeSpec,
    profile: ProfileArchetype,
    index_in_profile: int,
    rng: np.random.Generator,
) -> tuple[dict[int, int], dict[int, tuple], int | None]:
    """Template id and task-completion override per active week for a student.

    Overrides replace the template's task behavior: passers keep mild
    submissions through early slumps, while dropouts stop submitting
    entirely once their decline begins.
    """
    templates: dict[int, int] = {}
    overrides: dict[int, tuple] = {}
    dropout: int | None = None
    weeks = range(1, spec.weeks + 1)
    if profile.name in ("adaptive_understanding", "diligent_followers", "task_focused"):
        table = _weekly_template_table(profile.name)
        for w in weeks:
            t = _pick(table.get(w, table["rest"]), rng)
            templates[w] = t
            if t >= 3:
                overrides[w] = SLIP_COMPLETION
    elif profile.name == "at_risk":
        if index_in_profile < len(spec.dropout_schedule):
            g, d = spec.dropout_schedule[index_in_profile]
            dropout = d
            pool = _DROPOUT_POOLS[index_in_profile % len(_DROPOUT_POOLS)]
            for w in range(1, d + 1):
                if w < g:
                    templates[w] = _pick(((2, 0.6), (1, 0.4)), rng)
                elif w >= d - 1:
                    templates[w] = 3  # falling behind right before dropping
                    overrides[w] = DECLINE_COMPLETION
                else:
                    if w == 1:
                        templates[w] = 7  # a bad start presents as slow_start
                    elif rng.random() < 0.7:
                        templates[w] = 3
                    else:
                        templates[w] = int(pool[int(rng.integers(len(pool)))])
                    overrides[w] = DECLINE_COMPLETION
        else:
            # Chronically inactive but persistent student (passes at the wire).
            for w in weeks:
                templates[w] = 6 if rng.random() < 0.55 else 3
    elif profile.name == "outlier_perseverer":
        for w in weeks:
            if w == 9:
                continue  # one fully inactive week
            templates[w] = 11
    else:
        raise ValidationError(f"unknown profile {profile.name!r}")
    return templates, overrides, dropout


def _plant_risk(
    spec: ArchetypeSpec,
    plan: CoursePlan,
    templates: dict[int, int],
    overrides: dict[int, tuple],
) -> dict[int, str]:
    """Risk class per active week from the expected cumulative completion.

    The rule mirrors the information set of a deadline-based predictor:
    weeks are high risk once the student's expected cumulative task
    completion falls below the threshold, regardless of how their session
    pattern looks that week.
    """
    risk: dict[int, str] = {}
    cum_done = 0.0
    cum_avail = 0.0
    last = max(templates)
    for w in range(1, last + 1):
        avail = sum(plan.count(w, c) for c in CATEGORIES)
        cum_avail += avail
        if w in templates:
            completion = overrides.get(w, spec.templates[templates[w]].completion)
            cum_done += sum(min(1.0, target) * plan.count(w, cat)
                            for cat, target in completion)
            frac = cum_done / cum_avail if cum_avail else 0.0
            risk[w] = "high" if frac < RISK_COMPLETION_THRESHOLD else "low"
    return risk


def _next_session_start(
    cursor: datetime, week_start: datetime, rng: np.random.Generator
) -> datetime | None:
    """Roll evenings over to the next morning; None once the week is spent.

    The ceiling leaves room for the longest possible session so a dropout's
    final week never spills events past its own week.
    """
    day = int((cursor - week_start).total_seconds() // 86400)
    if cursor >= week_start + timedelta(days=day, hours=18):
        day += 1
        cursor = week_start + timedelta(days=day, hours=8,
                                        minutes=int(rng.integers(0, 120)))
    if cursor > week_start + timedelta(days=6, hours=18):
        return None
    return cursor


def _emit_session(
    student: str,
    start: datetime,
    codes: Sequence[str],
    week: int,
    rng: np.random.Generator,
    raw_lines: list[str],
) -> tuple[datetime, datetime]:
    """Append raw lines for one session; returns (start, end) instants."""
    t = start
    prev_code: str | None = None
    first = t
    for code in codes:
        if prev_code is not None:
            # Identical consecutive debounced codes must outlive the merge
            # window or they would collapse during ingest.
            if code == prev_code and code.startswith("read:"):
                gap_s = 70 + int(rng.integers(0, 530))
            else:
                gap_s = 10 + int(rng.integers(0, 590))
            t = t + timedelta(seconds=gap_s, milliseconds=int(rng.integers(0, 1000)))
            t = t.replace(microsecond=(t.microsecond // 1000) * 1000)
        raw_lines.append(_fmt_raw(t, student, _raw_action(code, week, rng)))
        prev_code = code
    return first, t


def generate(spec: ArchetypeSpec | None = None) -> GeneratedCohort:
    """Generate a full cohort from planted archetypes, with ground truth."""
    if spec is None:
        spec = ArchetypeSpec()
    rng = np.random.default_rng(spec.seed)
    calendar = CourseCalendar.default(spec.first_week_start, spec.weeks, spec.tz)
    plan = default_plan(spec.weeks)

    students: list[tuple[str, ProfileArchetype, int]] = []
    i = 1
    for profile in spec.profiles:
        for j in range(profile.count):
            students.append((f"s{i:02d}", profile, j))
            i += 1

    raw_lines: list[str] = []
    submissions: list[SubmissionRecord] = []
    grades: list[GradeRecord] = []
    themes: list[tuple[str, str]] = []
    opinions: dict[str, str] = {}
    dropped: dict[str, bool] = {}
    gt = GroundTruth({}, {}, {}, {}, {}, {}, 0, 0)

    profile_ids = {p.name: k for k, p in enumerate(spec.profiles)}
    course_end = calendar.end_of_week(spec.weeks)

    for student, profile, j in students:
        templates_by_week, overrides, dropout = _plan_student_weeks(
            spec, profile, j, rng)
        risk_by_week = _plant_risk(spec, plan, templates_by_week, overrides)
        gt.profile_by_student[student] = profile_ids[profile.name]
        gt.dropout_week[student] = dropout
        dropped[student] = dropout is not None
        completed: dict[tuple[int, str], set[str]] = {}
        n_relevant_lines_before = len(raw_lines)

        for week in sorted(templates_by_week):
            template = spec.templates[templates_by_week[week]]
            gt.template_by_week[(student, week)] = templates_by_week[week]
            gt.risk_by_week[(student, week)] = risk_by_week[week]
            if risk_by_week[week] == "low":
                gt.p_drop_by_week[(student, week)] = round(float(rng.uniform(0.02, 0.45)), 6)
            else:
                gt.p_drop_by_week[(student, week)] = round(float(rng.uniform(0.55, 0.98)), 6)

            n_multi = int(rng.integers(template.sessions[0], template.sessions[1] + 1))
            n_single = int(rng.binomial(n_multi, spec.single_session_rate))
            seq = sample_tactic_sequence(template, n_multi, rng)
            kinds = ["multi"] * n_multi + ["single"] * n_single
            kinds = [kinds[int(x)] for x in rng.permutation(len(kinds))]
            week_start = calendar.start_of_week(week)
            cursor = week_start + timedelta(hours=8, minutes=int(rng.integers(0, 180)))
            multi_i = 0
            for kind in kinds:
                start = _next_session_start(cursor, week_start, rng)
                if start is None:
                    break  # week exhausted; trailing sessions are dropped
                if kind == "single":
                    code = ("read:tasks-cur", "read:materials-book",
                            "read:lecture-cur-wk")[int(rng.integers(3))]
                    raw_lines.append(_fmt_raw(start, student, _raw_action(code, week, rng)))
                    gt.single_event_sessions += 1
                    end = start
                else:
                    tactic = seq[multi_i]
                    multi_i += 1
                    codes = _sample_session_codes(spec.tactics[tactic], week, rng)
                    first, end = _emit_session(student, start, codes, week, rng, raw_lines)
                    gt.tactic_by_session[f"{student}|{_iso_ms(first)}"] = tactic
                gap = timedelta(minutes=40) + timedelta(
                    seconds=int(rng.integers(0, 7 * 3600)))
                cursor = end + gap

            # Submissions implied by the week's task behavior.
            week_completion = overrides.get(week, template.completion)
            week_deadline = calendar.end_of_week(week)
            session_span = (week_start + timedelta(hours=9),
                            min(week_deadline - timedelta(hours=1), course_end))
            for category, target in week_completion:
                avail = plan.count(week, category)
                if avail == 0:
                    continue
                n_done = int(rng.binomial(avail, min(1.0, target)))
                done_ids = [f"w{week}-{category}{t_i + 1}" for t_i in range(n_done)]
                completed.setdefault((week, category), set()).update(done_ids)
                for task_id in done_ids:
                    n_wrong = int(rng.poisson(template.wrong_rate))
                    times = sorted(
                        rng.integers(0, int((session_span[1] - session_span[0]).total_seconds()),
                                     size=n_wrong + 1).tolist()
                    )
                    for a_i, offset in enumerate(times):
                        ts = session_span[0] + timedelta(seconds=int(offset))
                        submissions.append(SubmissionRecord(
                            ts, student, week, task_id, category,
                            correct=(a_i == len(times) - 1)))
            # Wrong-only attempts at tasks never completed this week.
            for category, target in week_completion:
                avail = plan.count(week, category)
                n_done = len(completed.get((week, category), ()))
                for t_i in range(n_done, avail):
                    if rng.random() < min(0.9, template.wrong_rate * 0.3):
                        ts = session_span[0] + timedelta(
                            seconds=int(rng.integers(0, int((session_span[1] - session_span[0]).total_seconds()))))
                        submissions.append(SubmissionRecord(
                            ts, student, week, f"w{week}-{category}{t_i + 1}",
                            category, correct=False))

        # Post-course fixes: late workers complete enough to clear the 40%
        # weekly-task floor after the deadline, using model answers.
        uses_fixes = any(
            spec.templates[t].fix_after_course for t in templates_by_week.values()
        )
        if dropout is None:
            total_avail = plan.cumulative_all(spec.weeks)
            total_done = sum(len(v) for v in completed.values())
            target_total = math.ceil(0.45 * total_avail)
            if uses_fixes and total_done < target_total:
                fix_t = course_end + timedelta(hours=2)
                for week in range(1, spec.weeks + 1):
                    for category in CATEGORIES:
                        avail = plan.count(week, category)
                        done = completed.setdefault((week, category), set())
                        for t_i in range(avail):
                            if total_done >= target_total:
                                break
                            task_id = f"w{week}-{category}{t_i + 1}"
                            if task_id in done:
                                continue
                            fix_t += timedelta(minutes=int(rng.integers(2, 30)))
                            submissions.append(SubmissionRecord(
                                fix_t, student, week, task_id, category, correct=True))
                            done.add(task_id)
                            total_done += 1

        # Irrelevant VLE noise, uniformly over the student's active span.
        n_relevant = len(raw_lines) - n_relevant_lines_before
        n_noise = int(round(n_relevant * spec.irrelevant_rate / (1 - spec.irrelevant_rate)))
        last_week = dropout if dropout is not None else spec.weeks
        span_end = calendar.end_of_week(last_week)
        span = (calendar.start_of_week(1), span_end)
        for _ in range(n_noise):
            ts = span[0] + timedelta(
                seconds=int(rng.integers(0, int((span[1] - span[0]).total_seconds()))),
                milliseconds=int(rng.integers(0, 1000)))
            ts = ts.replace(microsecond=(ts.microsecond // 1000) * 1000)
            action = _IRRELEVANT_ACTIONS[int(rng.integers(len(_IRRELEVANT_ACTIONS)))]
            raw_lines.append(_fmt_raw(ts, student, action))
            gt.irrelevant_lines += 1

        # Grades: distinct correct tasks before and after deadline fixes.
        total_avail = plan.cumulative_all(spec.weeks)
        distinct_before: set[str] = set()
        distinct_after: set[str] = set()
        for s_rec in submissions:
            if s_rec.student != student or not s_rec.correct:
                continue
            distinct_after.add(s_rec.task_id)
            if s_rec.timestamp <= calendar.end_of_week(s_rec.week_index):
                distinct_before.add(s_rec.task_id)
        pct_before = len(distinct_before) / total_avail
        pct_after = len(distinct_after) / total_avail
        if dropout is not None:
            exam = 0.0
            grade = 0.0
        else:
            exam = float(np.clip(rng.normal(profile.exam_mean, profile.exam_sd), 0.0, 1.0))
            grade = float(np.clip(round(5 * (0.4 * pct_after + 0.6 * exam)), 0, 5))
        grades.append(GradeRecord(student, pct_before, pct_after, exam, grade))

        # Self-reports.
        if rng.random() < profile.respond_rate:
            opinions[student] = _pick(profile.opinion_dist, rng)
            for theme, prob in profile.theme_pool:
                if rng.random() < prob:
                    themes.append((student, theme))

    raw_lines.sort(key=lambda line: (line[:23], line))
    return GeneratedCohort(
        raw_lines=raw_lines,
        submissions=sorted(submissions, key=lambda s: (s.timestamp, s.student, s.task_id)),
        grades=grades,
        themes=themes,
        opinions=opinions,
        dropped=dropped,
        ground_truth=gt,
        calendar=calendar,
        plan=plan,
    )


def write_cohort(cohort: GeneratedCohort, out_dir: str | Path) -> dict[str, Path]:
    """Write every cohort artifact in its ingest format; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "raw_log": out / "raw.log",
        "submissions": out / "submissions.csv",
        "grades": out / "grades.csv",
        "themes": out / "themes.csv",
        "opinions": out / "opinions.csv",
        "labels": out / "labels.csv",
        "ground_truth": out / "ground_truth.json",
        "calendar": out / "calendar.csv",
        "plan": out / "plan.json",
    }
    paths["raw_log"].write_text("\n".join(cohort.raw_lines) + "\n",
                                encoding="utf-8", newline="\n")
    paths["submissions"].write_text(submissions_to_csv(cohort.submissions),
                                    encoding="utf-8", newline="\n")
    paths["grades"].write_text(grades_to_csv(cohort.grades), encoding="utf-8", newline="\n")
    theme_lines = ["student,theme"] + [f"{s},{t}" for s, t in cohort.themes]
    paths["themes"].write_text("\n".join(theme_lines) + "\n", encoding="utf-8", newline="\n")
    opinion_lines = ["student,opinion"] + [
        f"{s},{o}" for s, o in sorted(cohort.opinions.items())
    ]
    paths["opinions"].write_text("\n".join(opinion_lines) + "\n",
                                 encoding="utf-8", newline="\n")
    label_lines = ["student,dropped"] + [
        f"{s},{1 if d else 0}" for s, d in sorted(cohort.dropped.items())
    ]
    paths["labels"].write_text("\n".join(label_lines) + "\n", encoding="utf-8", newline="\n")
    paths["ground_truth"].write_text(cohort.ground_truth.to_json(),
                                     encoding="utf-8", newline="\n")
    paths["calendar"].write_text(cohort.calendar.to_csv(), encoding="utf-8", newline="\n")
    paths["plan"].write_text(cohort.plan.to_json(), encoding="utf-8", newline="\n")
    return paths


def score_recovery(
    gt: GroundTruth,
    session_ids: Sequence[str] | None = None,
    session_labels: Sequence[int] | None = None,
    strategy_keys: Sequence[tuple[str, int]] | None = None,
    strategy_labels: Sequence[object] | None = None,
    profile_students: Sequence[str] | None = None,
    profile_labels: Sequence[int] | None = None,
) -> dict[str, float]:
    """ARI of recovered labels against planted ones, per supplied layer."""
    from .cluster import adjusted_rand_index

    out: dict[str, float] = {}
    if session_ids is not None:
        planted = []
        for sid in session_ids:
            if sid not in gt.tactic_by_session:
                raise ValidationError(f"session {sid!r} not in ground truth")
            planted.append(gt.tactic_by_session[sid])
        out["tactic"] = adjusted_rand_index(planted, list(session_labels))
    if strategy_keys is not None:
        planted = []
        for key in strategy_keys:
            if key not in gt.template_by_week:
                raise ValidationError(f"strategy {key!r} not in ground truth")
            planted.append(gt.template_by_week[key])
        recovered = [str(lab) for lab in strategy_labels]
        out["strategy"] = adjusted_rand_index([str(p) for p in planted], recovered)
    if profile_students is not None:
        planted = []
        for s in profile_students:
            if s not in gt.profile_by_student:
                raise ValidationError(f"student {s!r} not in ground truth")
            planted.append(gt.profile_by_student[s])
        out["profile"] = adjusted_rand_index(planted, list(profile_labels))
    return out
