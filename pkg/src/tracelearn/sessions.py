"""Splitting per-student trace streams into study sessions.

A session is a maximal run of one student's events whose inter-event gaps
stay within a cutoff (25 minutes by default); single-event sessions are
discarded as accidental interactions.  Each surviving session is summarized
as a vector of relative event-code frequencies.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .ingest import CourseCalendar, EventCodeRegistry, TraceEvent, format_trace_line

DEFAULT_GAP_CUTOFF = timedelta(minutes=25)


@dataclass(frozen=True)
class Session:
    student: str
    week_index: int  # 1-based course week of the first event; 0 if no calendar given
    events: tuple[TraceEvent, ...]

    @property
    def start(self) -> datetime:
        return self.events[0].timestamp

    @property
    def end(self) -> datetime:
        return self.events[-1].timestamp

    @property
    def session_id(self) -> str:
        stamp = format_trace_line(self.events[0]).split(";")[0]
        return f"{self.student}|{stamp}"


@dataclass(frozen=True)
class SessionFrequencyVector:
    values: np.ndarray  # one entry per registry code, sums to 1
    session_ref: str    # Session.session_id

    def __post_init__(self):
        total = float(self.values.sum())
        if self.values.size and abs(total - 1.0) > 1e-9:
            raise ValidationError(f"frequency vector sums to {total}, expected 1")


def split_sessions(
    events: Sequence[TraceEvent],
    gap_cutoff: timedelta = DEFAULT_GAP_CUTOFF,
    calendar: CourseCalendar | None = None,
) -> list[Session]:
    """Split one student's time-ordered events at gaps longer than the cutoff.

    A gap strictly greater than ``gap_cutoff`` ends the running session at
    the earlier event and starts a new one at the later event.  Splitting
    partitions the input; single-event sessions are kept here and removed
    by :func:`filter_sessions`.
    """
    if gap_cutoff <= timedelta(0):
        raise ValidationError("gap cutoff must be positive")
    if not events:
        return []
    students = {e.student for e in events}
    if len(students) != 1:
        raise ValidationError("split_sessions expects a single student's stream")
    for a, b in zip(events, events[1:]):
        if b.timestamp < a.timestamp:
            raise ValidationError("events must be sorted by timestamp")

    sessions: list[Session] = []
    run: list[TraceEvent] = [events[0]]
    for e in events[1:]:
        if e.timestamp - run[-1].timestamp > gap_cutoff:
            sessions.append(_make_session(run, calendar))
            run = [e]
        else:
            run.append(e)
    sessions.append(_make_session(run, calendar))
    return sessions


def _make_session(run: list[TraceEvent], calendar: CourseCalendar | None) -> Session:
    week = calendar.week_of(run[0].timestamp) if calendar is not None else 0
    return Session(run[0].student, week, tuple(run))


def filter_sessions(sessions: Sequence[Session]) -> list[Session]:
    """Drop single-event sessions."""
    return [s for s in sessions if len(s.events) >= 2]


def frequency_vector(session: Session, registry: EventCodeRegistry) -> SessionFrequencyVector:
    """Relative frequency of each registry code within the session."""
    if not session.events:
        raise ValidationError("cannot summarize an empty session")
    counts = np.zeros(len(registry), dtype=np.float64)
    for e in session.events:
        counts[registry.index(e.code)] += 1.0
    return SessionFrequencyVector(counts / len(session.events), session.session_id)


def sessionize(
    events: Sequence[TraceEvent],
    registry: EventCodeRegistry,
    calendar: CourseCalendar | None = None,
    gap_cutoff: timedelta = DEFAULT_GAP_CUTOFF,
) -> tuple[list[Session], np.ndarray]:
    """Split every student's stream, filter, and stack frequency vectors.

    Returns the surviving sessions (students in sorted order, sessions in
    time order) and the matching (n_sessions, n_codes) matrix.
    """
    from .ingest import iter_student_streams

    kept: list[Session] = []
    for _, stream in iter_student_streams(events):
        kept.extend(filter_sessions(split_sessions(stream, gap_cutoff, calendar)))
    if kept:
        matrix = np.stack([frequency_vector(s, registry).values for s in kept])
    else:
        matrix = np.zeros((0, len(registry)))
    return kept, matrix


def sessions_to_csv(sessions: Sequence[Session]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["session_id", "student", "week", "start", "end", "n_events"])
    for s in sessions:
        start = format_trace_line(s.events[0]).split(";")[0]
        end = format_trace_line(s.events[-1]).split(";")[0]
        w.writerow([s.session_id, s.student, s.week_index, start, end, len(s.events)])
    return buf.getvalue()


def vectors_to_csv(
    sessions: Sequence[Session], matrix: np.ndarray, registry: EventCodeRegistry
) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["session_id", *registry.codes])
    for s, row in zip(sessions, matrix):
        w.writerow([s.session_id, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def write_sessions_csv(sessions: Sequence[Session], path: str | Path) -> None:
    Path(path).write_text(sessions_to_csv(sessions), encoding="utf-8", newline="\n")
