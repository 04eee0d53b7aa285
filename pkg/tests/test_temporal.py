from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import context
from tiser.contexts import parse_context
from tiser.errors import EmptyContext
from tiser.temporal import (
    ConsistencyReport,
    Ordering,
    TemporalFact,
    Timeline,
    TimelineEvent,
    TimePoint,
    build_timeline,
    check_consistency,
    compare_timepoints,
    entry_timeline,
    merge_boundaries,
)


def test_timepoint_validation():
    assert TimePoint(2007, 5).granularity == "month"
    assert TimePoint(2007).granularity == "year"
    assert TimePoint(2007, 5, 14).granularity == "day"
    with pytest.raises(ValueError):
        TimePoint(2007, 13)
    with pytest.raises(ValueError):
        TimePoint(2007, None, 3)
    with pytest.raises(ValueError):
        TimePoint(10000)


def test_timepoint_str_and_dict_round_trip():
    for tp, text in ((TimePoint(1908), "1908"), (TimePoint(2007, 5), "May 2007"), (TimePoint(2007, 5, 14), "May 14, 2007")):
        assert str(tp) == text
        assert TimePoint.from_dict(tp.to_dict()) == tp


def test_compare_examples():
    assert compare_timepoints(TimePoint(1880), TimePoint(1890)) is Ordering.BEFORE
    assert compare_timepoints(TimePoint(2007, 5), TimePoint(2007, 5)) is Ordering.EQUAL
    assert compare_timepoints(TimePoint(2014, 2), TimePoint(2014)) is Ordering.EQUAL
    assert compare_timepoints(TimePoint(2014, 2), TimePoint(2014), strict=True) is Ordering.INCOMPARABLE


def _shared_prefix_oracle(a: TimePoint, b: TimePoint, strict: bool) -> Ordering:
    # Independent restatement: pad to the shorter length and compare lexicographically.
    pa = [a.year] + ([a.month] if a.month else []) + ([a.day] if a.day else [])
    pb = [b.year] + ([b.month] if b.month else []) + ([b.day] if b.day else [])
    for x, y in zip(pa, pb):
        if x != y:
            return Ordering.BEFORE if x < y else Ordering.AFTER
    if len(pa) != len(pb) and strict:
        return Ordering.INCOMPARABLE
    return Ordering.EQUAL


def test_compare_all_granularity_pairs_brute_force():
    points = [TimePoint(2014)] + [TimePoint(y, m) for y in (2013, 2014) for m in (1, 2, 12)]
    points += [TimePoint(2014, 2, d) for d in (1, 28)]
    for a, b in itertools.product(points, repeat=2):
        for strict in (False, True):
            assert compare_timepoints(a, b, strict) is _shared_prefix_oracle(a, b, strict)


def test_compare_year_points_antisymmetric_and_transitive_exhaustive():
    years = [TimePoint(y) for y in range(1900, 2001)]
    flip = {Ordering.BEFORE: Ordering.AFTER, Ordering.AFTER: Ordering.BEFORE, Ordering.EQUAL: Ordering.EQUAL}
    for a in years:
        for b in years:
            assert compare_timepoints(b, a) is flip[compare_timepoints(a, b)]
    # transitivity on a stride sample keeps the cube small
    sample = years[::7]
    for a, b, c in itertools.product(sample, repeat=3):
        if compare_timepoints(a, b) is Ordering.BEFORE and compare_timepoints(b, c) is Ordering.BEFORE:
            assert compare_timepoints(a, c) is Ordering.BEFORE


def test_fact_kind_invariants():
    with pytest.raises(ValueError):
        TemporalFact("x", "interval", start=TimePoint(2000))
    with pytest.raises(ValueError):
        TemporalFact("x", "point_start", end=TimePoint(2000))
    with pytest.raises(ValueError):
        TemporalFact(" ", "point_start", start=TimePoint(2000))
    assert not TemporalFact("x", "interval", TimePoint(1946), TimePoint(1940)).is_well_ordered()


def test_amy_johnson_timeline():
    facts = parse_context(context("amy_johnson")).facts
    assert len(facts) == 8
    t = build_timeline(facts)
    # Eight point clauses give eight boundaries whether or not start/end pairs merge.
    assert len(t.events) == 8
    assert t.events[0].label == "Amy Johnson was born in Willowdale, Kansas"
    assert t.events[0].at == TimePoint(1880)
    assert check_consistency(t).consistent
    assert len(build_timeline(facts, merge=False).events) == 8


def test_lucas_prescott_timeline_bounds():
    t = build_timeline(parse_context(context("lucas_prescott")).facts)
    assert t.events[0].at == TimePoint(1908)
    assert t.events[-1].at == TimePoint(1997)


def test_single_fact_and_empty():
    t = build_timeline([TemporalFact("X", "point_start", start=TimePoint(2000))])
    assert len(t.events) == 1
    with pytest.raises(EmptyContext):
        build_timeline([])


def test_merge_boundaries_pairs_marriage():
    facts = parse_context(context("amy_johnson")).facts
    merged = merge_boundaries(facts)
    marriages = [f for f in merged if "married" in f.statement]
    assert all(f.kind == "interval" for f in marriages)
    assert {(f.start.year, f.end.year) for f in marriages} == {(1914, 1964)}


def test_end_before_start_violation():
    facts = [
        TemporalFact("A married B", "point_start", start=TimePoint(1946), source_index=0),
        TemporalFact("A married B", "point_end", end=TimePoint(1940), source_index=1),
    ]
    report = check_consistency(entry_timeline(facts))
    assert "end_before_start" in report.codes()


def test_duplicate_event_violation():
    f = TemporalFact("X", "point_start", start=TimePoint(2000))
    ev = TimelineEvent("X", TimePoint(2000), "start", 0)
    report = check_consistency(Timeline((ev, ev), (f,)))
    assert report.codes() == {"duplicate_event"}


def test_unordered_and_dangling_end():
    a = TemporalFact("A", "point_start", start=TimePoint(2000), source_index=0)
    b = TemporalFact("B", "interval", TimePoint(1990), TimePoint(1995), source_index=1)
    events = (TimelineEvent("A", TimePoint(2000), "start", 0), TimelineEvent("B", TimePoint(1995), "end", 1))
    report = check_consistency(Timeline(events, (a, b)))
    assert report.codes() == {"unordered", "dangling_end"}
    assert not report.consistent


def test_entry_timeline_flags_written_disorder_but_chronological_does_not():
    facts = [
        TemporalFact("late", "point_start", start=TimePoint(1990), source_index=0),
        TemporalFact("early", "point_start", start=TimePoint(1950), source_index=1),
    ]
    assert check_consistency(entry_timeline(facts)).codes() == {"unordered"}
    assert check_consistency(build_timeline(facts)).consistent


def test_consistency_report_invariant():
    assert ConsistencyReport().consistent


years = st.integers(1900, 2000)


@st.composite
def fact_lists(draw):
    n = draw(st.integers(1, 12))
    facts = []
    for i in range(n):
        kind = draw(st.sampled_from(["point_start", "point_end", "interval"]))
        label = draw(st.sampled_from(["A", "B", "C", "D"]))
        if kind == "interval":
            s, e = sorted((draw(years), draw(years)))
            facts.append(TemporalFact(label, kind, TimePoint(s), TimePoint(e), source_index=i))
        elif kind == "point_start":
            facts.append(TemporalFact(label, kind, start=TimePoint(draw(years)), source_index=i))
        else:
            facts.append(TemporalFact(label, kind, end=TimePoint(draw(years)), source_index=i))
    return facts


def _distinct_events(t: Timeline) -> bool:
    keys = [(e.label, e.at, e.boundary) for e in t.events]
    return len(keys) == len(set(keys))


@settings(max_examples=200, deadline=None)
@given(fact_lists())
def test_build_timeline_sorted_and_consistent(facts):
    t = build_timeline(facts, merge=False)
    assert len(t.events) == sum((f.start is not None) + (f.end is not None) for f in facts)
    keys = [e.at.sort_key for e in t.events]
    assert keys == sorted(keys)
    report = check_consistency(t)
    if _distinct_events(t):
        assert report.consistent, report
    else:
        assert report.codes() == {"duplicate_event"}


@settings(max_examples=200, deadline=None)
@given(fact_lists())
def test_build_timeline_idempotent(facts):
    t = build_timeline(facts)
    again = build_timeline(t.facts)
    assert again.events == t.events
