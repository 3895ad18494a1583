"""Raw VLE log parsing and recoding into trace-log events.

The raw log is one record per line,

    ``YYYY-MM-DD HH:MM:SS,mmm INFO: <user> [<ip>]: <action>``

and is turned into trace events in four steps: course-irrelevant actions
are dropped, the rest are recoded through a configurable rule table into
event codes (some carrying an absolute course week), week tags are
simplified to prev/cur/next relative to the event's own course week, and
bursts of identical debounced events are merged.  The resulting events
serialize line-by-line as ``TIMESTAMP;STUDENT;EVENT_CODE``.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence
from zoneinfo import ZoneInfo

from .errors import ParseError, ValidationError

UTC = timezone.utc

_WEEK_REL = ("prev", "cur", "next")

# Marker segment for an absolute course week inside an intermediate code,
# e.g. "read:tasks-w3" before simplification to "read:tasks-cur".
_WEEK_TAG_RE = re.compile(r"(?<![a-z0-9])w(\d+)(?![a-z0-9])")


def _expand(template: str, rels: Sequence[str]) -> list[str]:
    return [template.format(rel=rel) for rel in rels]


def _default_codes() -> tuple[str, ...]:
    codes: list[str] = []
    codes += ["answer-wrong:lecture-cur-wk-example"]
    codes += ["answer-wrong:materials-book-example"]
    for kind in ("self-assessment", "intro", "basic", "core", "bonus", "guru"):
        codes += _expand(f"answer-wrong:tasks-{{rel}}-{kind}", ("prev", "cur"))
    codes += _expand("answer-wrong:tasks-{rel}-supplementary", ("prev", "cur", "extra", "supp"))
    codes += _expand("answer:lecture-{rel}-wk-example", _WEEK_REL)
    codes += ["answer:materials-book-example"]
    for kind in ("self-assessment", "intro", "basic", "core", "bonus", "guru"):
        codes += _expand(f"answer:tasks-{{rel}}-{kind}", _WEEK_REL)
    codes += _expand("answer:tasks-{rel}-supplementary", ("prev", "cur", "next", "extra", "supp"))
    codes += _expand("check-model-answer:tasks-{rel}-basic", ("prev", "cur"))
    codes += _expand("check-model-answer:tasks-{rel}-core", ("prev", "cur"))
    codes += [
        "check-model-answer:tasks-prev-bonus",
        "check-model-answer:tasks-prev-guru",
        "check-model-answer:tasks-prev-intro",
        "check-model-answer:tasks-prev-supplementary",
        "join-lecture:lecture-cur-wk",
        "leave-lecture:lecture-cur-wk",
        "read:lecture-all",
        # Spelled exactly as emitted by the source logging system.
        "read:lecuture-cur",
    ]
    codes += _expand("read:lecture-{rel}-wk", _WEEK_REL)
    codes += [
        "read:materials-book",
        "read:tasks",
        "read:tasks-cur",
        "read:tasks-extra",
        "read:tasks-next",
        "read:tasks-prev",
        "read:tasks-pre",
        "read:tasks-review",
        "read:tasks-supp",
        "session-start:None",
        "session-end:None",
    ]
    codes += _expand("watch-video:lecture-{rel}-wk", ("prev", "cur"))
    codes += _expand("watch-video:tasks-review-{rel}", _WEEK_REL)
    codes += ["workshop-start:None", "workshop-end:None"]
    return tuple(codes)


def _is_week_relative(code: str) -> bool:
    return any(seg in _WEEK_REL for seg in re.split(r"[:\-]", code))


@dataclass(frozen=True)
class EventCodeRegistry:
    """The closed vocabulary of trace event codes.

    ``week_sensitive`` lists codes produced by week-tag simplification;
    ``merge_debounced`` lists codes subject to consecutive-event merging
    (by default every ``read:*`` code, which repeat on page scrolls).
    """

    codes: tuple[str, ...]
    week_sensitive: frozenset[str]
    merge_debounced: frozenset[str]

    def __post_init__(self):
        if len(set(self.codes)) != len(self.codes):
            raise ValidationError("registry codes must be unique")
        if not self.week_sensitive <= set(self.codes):
            raise ValidationError("week_sensitive must be a subset of codes")

    @classmethod
    def default(cls) -> "EventCodeRegistry":
        codes = _default_codes()
        return cls(
            codes=codes,
            week_sensitive=frozenset(c for c in codes if _is_week_relative(c)),
            merge_debounced=frozenset(c for c in codes if c.startswith("read:")),
        )

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: str) -> bool:
        return code in self._index

    @property
    def _index(self) -> dict[str, int]:
        idx = getattr(self, "_index_cache", None)
        if idx is None:
            idx = {c: i for i, c in enumerate(self.codes)}
            object.__setattr__(self, "_index_cache", idx)
        return idx

    def index(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise ValidationError(f"unknown event code: {code!r}") from None

    def to_json(self) -> str:
        return json.dumps(
            {
                "codes": list(self.codes),
                "week_sensitive": sorted(self.week_sensitive),
                "merge_debounced": sorted(self.merge_debounced),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "EventCodeRegistry":
        doc = json.loads(text)
        return cls(
            codes=tuple(doc["codes"]),
            week_sensitive=frozenset(doc["week_sensitive"]),
            merge_debounced=frozenset(doc["merge_debounced"]),
        )


@dataclass(frozen=True)
class CourseCalendar:
    """Ordered course week start dates, interpreted in the course timezone.

    Week boundaries are half-open: an event belongs to the last week whose
    start instant is <= the event timestamp.  Timestamps before the first
    week start are outside the course.
    """

    week_starts: tuple[date, ...]
    tz: str = "UTC"

    def __post_init__(self):
        if not self.week_starts:
            raise ValidationError("calendar needs at least one week start")
        if any(b <= a for a, b in zip(self.week_starts, self.week_starts[1:])):
            raise ValidationError("week starts must be strictly increasing")

    @classmethod
    def default(cls, first_monday: date = date(2023, 9, 4), weeks: int = 11,
                tz: str = "UTC") -> "CourseCalendar":
        return cls(tuple(first_monday + timedelta(weeks=i) for i in range(weeks)), tz=tz)

    @property
    def week_count(self) -> int:
        return len(self.week_starts)

    @property
    def _boundaries_utc(self) -> tuple[datetime, ...]:
        cached = getattr(self, "_bounds_cache", None)
        if cached is None:
            zone = ZoneInfo(self.tz)
            cached = tuple(
                datetime(d.year, d.month, d.day, tzinfo=zone).astimezone(UTC)
                for d in self.week_starts
            )
            object.__setattr__(self, "_bounds_cache", cached)
        return cached

    def start_of_week(self, week_index: int) -> datetime:
        """UTC instant at which 1-based course week ``week_index`` begins."""
        return self._boundaries_utc[week_index - 1]

    def end_of_week(self, week_index: int) -> datetime:
        """UTC instant at which the week's task deadline falls (next week start)."""
        bounds = self._boundaries_utc
        if week_index < self.week_count:
            return bounds[week_index]
        return bounds[-1] + timedelta(weeks=1)

    def week_of(self, ts: datetime) -> int:
        """1-based course week containing ``ts`` (UTC-aware datetime)."""
        bounds = self._boundaries_utc
        if ts < bounds[0]:
            raise ValidationError(f"timestamp {ts.isoformat()} is before the course start")
        week = 1
        for i, b in enumerate(bounds):
            if ts >= b:
                week = i + 1
            else:
                break
        return week

    def covers(self, ts: datetime) -> bool:
        return ts >= self._boundaries_utc[0]

    def to_csv(self) -> str:
        out = ["week_index,start_date"]
        out += [f"{i + 1},{d.isoformat()}" for i, d in enumerate(self.week_starts)]
        return "\n".join(out) + "\n"

    @classmethod
    def from_csv(cls, text: str, tz: str = "UTC") -> "CourseCalendar":
        rows = list(csv.DictReader(text.splitlines()))
        rows.sort(key=lambda r: int(r["week_index"]))
        return cls(tuple(date.fromisoformat(r["start_date"]) for r in rows), tz=tz)


@dataclass(frozen=True)
class RawLogLine:
    timestamp: datetime
    username: str
    client_address: str  # captured for completeness, dropped downstream
    action: str


@dataclass(frozen=True)
class TraceEvent:
    timestamp: datetime
    student: str
    code: str


_RAW_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2}) (\d{2}):(\d{2}):(\d{2}),(\d{3})"
    r" INFO: (?P<user>\S+) \[(?P<ip>[^\]]*)\]: (?P<action>.+)$"
)
_TS_TEMPLATE = "dddd-dd-dd dd:dd:dd,ddd"
_INFO_LITERAL = " INFO: "


def _timestamp_mismatch_offset(line: str) -> int | None:
    for i, want in enumerate(_TS_TEMPLATE):
        if i >= len(line):
            return i
        have = line[i]
        if want == "d":
            if not have.isdigit():
                return i
        elif have != want:
            return i
    return None


def parse_raw_line(line: str) -> RawLogLine:
    """Parse one raw log record, raising :class:`ParseError` at the failing byte."""
    if line == "":
        raise ParseError("empty line", 0)
    m = _RAW_RE.match(line)
    if m is None:
        off = _timestamp_mismatch_offset(line)
        if off is not None:
            raise ParseError("malformed timestamp", off)
        base = len(_TS_TEMPLATE)
        literal = line[base:base + len(_INFO_LITERAL)]
        if literal != _INFO_LITERAL:
            for j, (a, b) in enumerate(zip(literal, _INFO_LITERAL)):
                if a != b:
                    raise ParseError("expected ' INFO: ' separator", base + j)
            raise ParseError("truncated record", len(line))
        lb = line.find(" [", base + len(_INFO_LITERAL))
        if lb < 0:
            raise ParseError("missing '[client]' separator", len(line))
        rb = line.find("]: ", lb)
        if rb < 0:
            raise ParseError("missing ']: ' separator", len(line))
        raise ParseError("empty action", rb + 3)
    y, mo, d, h, mi, s, ms = (int(g) for g in m.groups()[:7])
    try:
        ts = datetime(y, mo, d, h, mi, s, ms * 1000, tzinfo=UTC)
    except ValueError as exc:
        raise ParseError(f"invalid timestamp: {exc}", 0) from None
    return RawLogLine(ts, m["user"], m["ip"], m["action"])


def format_raw_line(raw: RawLogLine) -> str:
    ts = raw.timestamp.astimezone(UTC)
    if ts.microsecond % 1000:
        raise ValidationError("raw log timestamps carry millisecond precision only")
    stamp = f"{ts:%Y-%m-%d %H:%M:%S},{ts.microsecond // 1000:03d}"
    return f"{stamp} INFO: {raw.username} [{raw.client_address}]: {raw.action}"


@dataclass(frozen=True)
class RecodeRule:
    """Maps raw actions matching ``pattern`` to an event-code template.

    Named groups of the pattern substitute into ``{name}`` slots of the
    template; a captured ``week`` group yields an absolute week marker
    (``w{week}``) that is later simplified to prev/cur/next.
    """

    pattern: str
    code: str
    _compiled: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_compiled", re.compile(self.pattern))


def default_rule_table() -> tuple[RecodeRule, ...]:
    """Example action -> code rules; the raw vocabulary is deployment-specific."""
    cat = "intro|basic|core|bonus|guru|self-assessment|supplementary"
    rules = [
        (r"^VIEW_DOC/book(?:/.*)?$", "read:materials-book"),
        (r"^VIEW_DOC/lecture/index$", "read:lecture-all"),
        (r"^VIEW_DOC/lecture/live$", "read:lecuture-cur"),
        (r"^VIEW_DOC/lecture/week(?P<week>\d+)$", "read:lecture-w{week}-wk"),
        (r"^WATCH/lecture/week(?P<week>\d+)$", "watch-video:lecture-w{week}-wk"),
        (r"^WATCH/review/week(?P<week>\d+)$", "watch-video:tasks-review-w{week}"),
        (r"^VIEW_TASKS/index$", "read:tasks"),
        (r"^VIEW_TASKS/week(?P<week>\d+)$", "read:tasks-w{week}"),
        (r"^VIEW_TASKS/extra$", "read:tasks-extra"),
        (r"^VIEW_TASKS/pre$", "read:tasks-pre"),
        (r"^VIEW_TASKS/review$", "read:tasks-review"),
        (r"^VIEW_TASKS/supp$", "read:tasks-supp"),
        (rf"^SUBMIT/week(?P<week>\d+)/(?P<kind>{cat})/t\d+/ok$",
         "answer:tasks-w{week}-{kind}"),
        (rf"^SUBMIT/week(?P<week>\d+)/(?P<kind>{cat})/t\d+/fail$",
         "answer-wrong:tasks-w{week}-{kind}"),
        (r"^SUBMIT/supp/t\d+/ok$", "answer:tasks-supp-supplementary"),
        (r"^SUBMIT/supp/t\d+/fail$", "answer-wrong:tasks-supp-supplementary"),
        (r"^SUBMIT/extra/t\d+/ok$", "answer:tasks-extra-supplementary"),
        (r"^SUBMIT/extra/t\d+/fail$", "answer-wrong:tasks-extra-supplementary"),
        (r"^SUBMIT_EXAMPLE/book/e\d+/ok$", "answer:materials-book-example"),
        (r"^SUBMIT_EXAMPLE/book/e\d+/fail$", "answer-wrong:materials-book-example"),
        (r"^SUBMIT_EXAMPLE/lecture/week(?P<week>\d+)/e\d+/ok$",
         "answer:lecture-w{week}-wk-example"),
        (r"^SUBMIT_EXAMPLE/lecture/week(?P<week>\d+)/e\d+/fail$",
         "answer-wrong:lecture-w{week}-wk-example"),
        (rf"^CHECK_ANSWER/week(?P<week>\d+)/(?P<kind>{cat})/t\d+$",
         "check-model-answer:tasks-w{week}-{kind}"),
        (r"^LECTURE/join/week(?P<week>\d+)$", "join-lecture:lecture-w{week}-wk"),
        (r"^LECTURE/leave/week(?P<week>\d+)$", "leave-lecture:lecture-w{week}-wk"),
        (r"^SESSION/start$", "session-start:None"),
        (r"^SESSION/end$", "session-end:None"),
        (r"^WORKSHOP/start$", "workshop-start:None"),
        (r"^WORKSHOP/end$", "workshop-end:None"),
    ]
    return tuple(RecodeRule(p, c) for p, c in rules)


def rules_to_json(rules: Sequence[RecodeRule]) -> str:
    return json.dumps([{"pattern": r.pattern, "code": r.code} for r in rules], indent=2)


def rules_from_json(text: str) -> tuple[RecodeRule, ...]:
    return tuple(RecodeRule(d["pattern"], d["code"]) for d in json.loads(text))


def recode_action(
    raw: RawLogLine,
    registry: EventCodeRegistry,
    calendar: CourseCalendar,
    rules: Sequence[RecodeRule] | None = None,
) -> TraceEvent | None:
    """Recode one raw record, or return None for course-irrelevant actions.

    Events outside the calendar (before the course start) are likewise
    discarded.  The returned event may carry an absolute week marker that
    :func:`relativize_week` simplifies.
    """
    if rules is None:
        rules = default_rule_table()
    if not calendar.covers(raw.timestamp):
        return None
    for rule in rules:
        m = rule._compiled.match(raw.action)
        if m is None:
            continue
        code = rule.code.format(**m.groupdict())
        if _WEEK_TAG_RE.search(code) is None and code not in registry:
            raise ValidationError(
                f"rule {rule.pattern!r} produced unknown code {code!r}"
            )
        return TraceEvent(raw.timestamp, raw.username, code)
    return None


def relativize_week(event: TraceEvent, calendar: CourseCalendar) -> TraceEvent:
    """Replace an absolute week marker with prev/cur/next.

    Week tags more than one week away clamp to prev/next, since the code
    vocabulary only distinguishes those three relations.  Events with no
    week marker pass through unchanged.
    """
    m = _WEEK_TAG_RE.search(event.code)
    if m is None:
        return event
    week = calendar.week_of(event.timestamp)  # raises before course start
    tag = int(m.group(1))
    rel = "cur" if tag == week else ("prev" if tag < week else "next")
    code = event.code[: m.start()] + rel + event.code[m.end():]
    return TraceEvent(event.timestamp, event.student, code)


def _check_sorted(events: Sequence[TraceEvent]) -> None:
    for a, b in zip(events, events[1:]):
        if (a.student, a.timestamp) > (b.student, b.timestamp):
            raise ValidationError(
                f"events not sorted by (student, timestamp) near {b.student} "
                f"{b.timestamp.isoformat()}"
            )


def merge_consecutive(
    events: Sequence[TraceEvent],
    registry: EventCodeRegistry,
    window: timedelta = timedelta(seconds=60),
) -> list[TraceEvent]:
    """Collapse runs of identical debounced events to their first occurrence.

    A run continues while successive gaps stay within ``window``; only
    codes in ``registry.merge_debounced`` are merged.  Input must be
    sorted by (student, timestamp).  Idempotent.
    """
    _check_sorted(events)
    out: list[TraceEvent] = []
    run_last: TraceEvent | None = None
    for e in events:
        if (
            run_last is not None
            and e.student == run_last.student
            and e.code == run_last.code
            and e.code in registry.merge_debounced
            and e.timestamp - run_last.timestamp <= window
        ):
            run_last = e  # extend the run, drop the event
            continue
        out.append(e)
        run_last = e
    return out


def ingest_lines(
    lines: Iterable[str],
    registry: EventCodeRegistry,
    calendar: CourseCalendar,
    rules: Sequence[RecodeRule] | None = None,
    merge_window: timedelta = timedelta(seconds=60),
) -> list[TraceEvent]:
    """Full raw-log ingest: parse, recode, relativize, sort, merge, validate."""
    if rules is None:
        rules = default_rule_table()
    events: list[TraceEvent] = []
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        raw = parse_raw_line(line)
        ev = recode_action(raw, registry, calendar, rules)
        if ev is None:
            continue
        events.append(relativize_week(ev, calendar))
    events.sort(key=lambda e: (e.student, e.timestamp, e.code))
    events = merge_consecutive(events, registry, merge_window)
    for e in events:
        if e.code not in registry:
            raise ValidationError(f"ingest produced non-registry code {e.code!r}")
    return events


def format_trace_line(event: TraceEvent) -> str:
    ts = event.timestamp.astimezone(UTC)
    if ts.microsecond % 1000:
        raise ValidationError("trace timestamps carry millisecond precision only")
    stamp = f"{ts:%Y-%m-%dT%H:%M:%S}.{ts.microsecond // 1000:03d}"
    return f"{stamp};{event.student};{event.code}"


def parse_trace_line(line: str) -> TraceEvent:
    parts = line.split(";")
    if len(parts) != 3:
        raise ParseError("expected TIMESTAMP;STUDENT;EVENT_CODE", 0)
    try:
        ts = datetime.strptime(parts[0], "%Y-%m-%dT%H:%M:%S.%f").replace(tzinfo=UTC)
    except ValueError:
        raise ParseError("malformed trace timestamp", 0) from None
    if not parts[1] or not parts[2]:
        raise ParseError("empty student or event code", len(parts[0]) + 1)
    return TraceEvent(ts, parts[1], parts[2])


def write_trace_log(events: Iterable[TraceEvent], path: str | Path) -> None:
    """Write events chronologically in the exact line format, UTF-8 + LF."""
    ordered = sorted(events, key=lambda e: (e.timestamp, e.student, e.code))
    text = "".join(format_trace_line(e) + "\n" for e in ordered)
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def read_trace_log(path: str | Path) -> list[TraceEvent]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                out.append(parse_trace_line(line))
    return out


def iter_student_streams(events: Sequence[TraceEvent]) -> Iterator[tuple[str, list[TraceEvent]]]:
    """Group events by student, each stream sorted by timestamp."""
    by_student: dict[str, list[TraceEvent]] = {}
    for e in events:
        by_student.setdefault(e.student, []).append(e)
    for student in sorted(by_student):
        stream = sorted(by_student[student], key=lambda e: e.timestamp)
        yield student, stream
