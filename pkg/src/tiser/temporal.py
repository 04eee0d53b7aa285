"""Dated facts and the timelines built from them, with consistency checks."""

from __future__ import annotations

import calendar
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import EmptyContext

MIN_YEAR = -9999
MAX_YEAR = 9999

GRANULARITIES = ("year", "month", "day")
FACT_KINDS = ("point_start", "point_end", "interval")
BOUNDARIES = ("start", "end")
VIOLATION_CODES = ("unordered", "end_before_start", "dangling_end", "duplicate_event", "unparseable")


class Ordering(str, Enum):
    BEFORE = "before"
    EQUAL = "equal"
    AFTER = "after"
    INCOMPARABLE = "incomparable"


@dataclass(frozen=True, order=False)
class TimePoint:
    """A Gregorian date whose month and day are optional."""

    year: int
    month: Optional[int] = None
    day: Optional[int] = None

    def __post_init__(self) -> None:
        if not MIN_YEAR <= self.year <= MAX_YEAR:
            raise ValueError(f"year {self.year} outside [{MIN_YEAR}, {MAX_YEAR}]")
        if self.month is not None and not 1 <= self.month <= 12:
            raise ValueError(f"month {self.month} outside 1-12")
        if self.day is not None:
            if self.month is None:
                raise ValueError("day requires month")
            if not 1 <= self.day <= 31:
                raise ValueError(f"day {self.day} outside 1-31")

    @property
    def granularity(self) -> str:
        if self.day is not None:
            return "day"
        if self.month is not None:
            return "month"
        return "year"

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (self.year, self.month or 0, self.day or 0)

    def prefix(self) -> tuple[int, ...]:
        parts = [self.year]
        if self.month is not None:
            parts.append(self.month)
            if self.day is not None:
                parts.append(self.day)
        return tuple(parts)

    def __str__(self) -> str:
        if self.month is None:
            return str(self.year)
        name = calendar.month_name[self.month]
        if self.day is None:
            return f"{name} {self.year}"
        return f"{name} {self.day}, {self.year}"

    def to_dict(self) -> dict:
        out = {"year": self.year}
        if self.month is not None:
            out["month"] = self.month
        if self.day is not None:
            out["day"] = self.day
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TimePoint":
        return cls(data["year"], data.get("month"), data.get("day"))


def compare_timepoints(a: TimePoint, b: TimePoint, strict: bool = False) -> Ordering:
    """Order two time points on their shared prefix.

    Points of different granularity that agree on the shared prefix are
    EQUAL in coarse mode and INCOMPARABLE when ``strict`` is set.
    """
    pa, pb = a.prefix(), b.prefix()
    n = min(len(pa), len(pb))
    if pa[:n] < pb[:n]:
        return Ordering.BEFORE
    if pa[:n] > pb[:n]:
        return Ordering.AFTER
    if len(pa) != len(pb) and strict:
        return Ordering.INCOMPARABLE
    return Ordering.EQUAL


def _precedes_or_equal(a: TimePoint, b: TimePoint) -> bool:
    return compare_timepoints(a, b) in (Ordering.BEFORE, Ordering.EQUAL)


@dataclass(frozen=True)
class TemporalFact:
    """One time-anchored assertion from a context.

    ``clause`` keeps the original clause text for free-text facts so they
    can be rendered back; it is excluded from equality.
    """

    statement: str
    kind: str
    start: Optional[TimePoint] = None
    end: Optional[TimePoint] = None
    subject: str = ""
    relation: str = ""
    obj: str = ""
    source_index: int = 0
    clause: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if not self.statement.strip():
            raise ValueError("statement must be non-empty")
        if self.kind not in FACT_KINDS:
            raise ValueError(f"unknown fact kind {self.kind!r}")
        if self.kind == "interval" and (self.start is None or self.end is None):
            raise ValueError("interval facts need start and end")
        if self.kind == "point_start" and (self.start is None or self.end is not None):
            raise ValueError("point_start facts need start only")
        if self.kind == "point_end" and (self.end is None or self.start is not None):
            raise ValueError("point_end facts need end only")

    @property
    def first_time(self) -> TimePoint:
        return self.start if self.start is not None else self.end  # type: ignore[return-value]

    def is_well_ordered(self) -> bool:
        return self.kind != "interval" or _precedes_or_equal(self.start, self.end)

    def to_dict(self) -> dict:
        return {
            "statement": self.statement,
            "subject": self.subject,
            "relation": self.relation,
            "object": self.obj,
            "kind": self.kind,
            "start": self.start.to_dict() if self.start else None,
            "end": self.end.to_dict() if self.end else None,
            "source_index": self.source_index,
        }


@dataclass(frozen=True)
class TimelineEvent:
    label: str
    at: TimePoint
    boundary: str
    fact_ref: int

    def __post_init__(self) -> None:
        if not self.label.strip():
            raise ValueError("event label must be non-empty")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "at": str(self.at),
            "boundary": self.boundary,
            "fact_ref": self.fact_ref,
        }


@dataclass(frozen=True)
class Timeline:
    """Events plus the facts they point into.

    ``ordering`` is ``"chronological"`` for timelines assembled by
    :func:`build_timeline` and ``"entry"`` for timelines taken verbatim from
    model output, where each fact's first boundary must follow written order.
    """

    events: tuple[TimelineEvent, ...]
    facts: tuple[TemporalFact, ...]
    ordering: str = "chronological"

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "facts", tuple(self.facts))
        for ev in self.events:
            if not 0 <= ev.fact_ref < len(self.facts):
                raise ValueError(f"fact_ref {ev.fact_ref} out of range")
        if self.ordering not in ("chronological", "entry"):
            raise ValueError(f"unknown ordering {self.ordering!r}")

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def to_dict(self) -> dict:
        return {
            "ordering": self.ordering,
            "events": [e.to_dict() for e in self.events],
        }


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


@dataclass(frozen=True)
class ConsistencyReport:
    violations: tuple[Violation, ...] = ()

    @property
    def consistent(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def to_dict(self) -> dict:
        return {
            "consistent": self.consistent,
            "violations": [{"code": v.code, "detail": v.detail} for v in self.violations],
        }


def merge_boundaries(facts: Sequence[TemporalFact]) -> list[TemporalFact]:
    """Pair ``starts at`` / ``ends at`` facts with the same statement into intervals.

    The i-th start of a statement pairs with its i-th end. An inverted pair
    still merges so that :func:`check_consistency` reports it.
    """
    ends: dict[str, deque[int]] = defaultdict(deque)
    for i, f in enumerate(facts):
        if f.kind == "point_end":
            ends[f.statement].append(i)

    merged_into: dict[int, TemporalFact] = {}
    consumed: set[int] = set()
    for i, f in enumerate(facts):
        if f.kind != "point_start" or not ends[f.statement]:
            continue
        j = ends[f.statement].popleft()
        end_fact = facts[j]
        consumed.add(j)
        merged_into[i] = TemporalFact(
            statement=f.statement,
            kind="interval",
            start=f.start,
            end=end_fact.end,
            subject=f.subject,
            relation=f.relation,
            obj=f.obj,
            source_index=f.source_index,
            clause=f.clause,
        )
    return [merged_into.get(i, f) for i, f in enumerate(facts) if i not in consumed]


def _fact_events(fact: TemporalFact, ref: int) -> list[TimelineEvent]:
    events = []
    if fact.start is not None:
        events.append(TimelineEvent(fact.statement, fact.start, "start", ref))
    if fact.end is not None:
        events.append(TimelineEvent(fact.statement, fact.end, "end", ref))
    return events


def _event_key(ev: TimelineEvent, facts: Sequence[TemporalFact]):
    return (ev.at.sort_key, facts[ev.fact_ref].source_index, BOUNDARIES.index(ev.boundary))


def build_timeline(facts: Iterable[TemporalFact], merge: bool = True) -> Timeline:
    """Order every fact boundary chronologically.

    Ties on time fall back to the fact's position in the context, then start
    before end. Start/end point pairs sharing a statement are merged into
    intervals first unless ``merge`` is false.
    """
    facts = list(facts)
    if not facts:
        raise EmptyContext("cannot build a timeline from zero facts")
    if merge:
        facts = merge_boundaries(facts)
    events = [ev for ref, f in enumerate(facts) for ev in _fact_events(f, ref)]
    events.sort(key=lambda ev: _event_key(ev, facts))
    return Timeline(tuple(events), tuple(facts), "chronological")


def entry_timeline(facts: Iterable[TemporalFact]) -> Timeline:
    """Keep facts in the order they were written (model-authored timelines)."""
    facts = merge_boundaries(list(facts))
    if not facts:
        raise EmptyContext("cannot build a timeline from zero facts")
    events = [ev for ref, f in enumerate(facts) for ev in _fact_events(f, ref)]
    return Timeline(tuple(events), tuple(facts), "entry")


def check_consistency(t: Timeline) -> ConsistencyReport:
    violations: list[Violation] = []

    if t.ordering == "chronological":
        sequence = list(t.events)
    else:
        seen_refs: set[int] = set()
        sequence = []
        for ev in t.events:
            if ev.fact_ref not in seen_refs:
                seen_refs.add(ev.fact_ref)
                sequence.append(ev)
    for prev, cur in zip(sequence, sequence[1:]):
        if compare_timepoints(prev.at, cur.at) is Ordering.AFTER:
            violations.append(
                Violation("unordered", f"{cur.label!r}@{cur.at} follows {prev.label!r}@{prev.at}")
            )

    starts: dict[int, TimelineEvent] = {}
    ends: dict[int, TimelineEvent] = {}
    for ev in t.events:
        (starts if ev.boundary == "start" else ends).setdefault(ev.fact_ref, ev)
    for ref, end_ev in ends.items():
        start_ev = starts.get(ref)
        if start_ev is None:
            if t.facts[ref].kind == "interval":
                violations.append(Violation("dangling_end", f"{end_ev.label!r} ends without a start"))
        elif compare_timepoints(end_ev.at, start_ev.at) is Ordering.BEFORE:
            violations.append(
                Violation("end_before_start", f"{end_ev.label!r} ends {end_ev.at} before start {start_ev.at}")
            )

    seen: set[tuple] = set()
    for ev in t.events:
        key = (ev.label, ev.at, ev.boundary)
        if key in seen:
            violations.append(Violation("duplicate_event", f"{ev.label!r}@{ev.at} ({ev.boundary}) repeated"))
        seen.add(key)

    return ConsistencyReport(tuple(violations))
