"""Deterministic answers to the benchmark's temporal question classes.

The solver works directly on parsed facts. Tests use it as ground truth and
the synthetic generation backend uses it to write traces.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .contexts import _PAREN_GROUP, parse_context, scan_times
from .errors import NoAdjacentFact, NoMatchingFact, TiserError, Unclassifiable, UnmatchedCandidate
from .temporal import Ordering, TemporalFact, TimePoint, compare_timepoints


class QuestionKind(str, Enum):
    CHRONOLOGICAL_RANK = "chronological_rank"
    POINT_IN_TIME = "point_in_time"
    RELATIVE_ORDER = "relative_order"
    IMMEDIATELY_AFTER = "immediately_after"
    HAPPENED_AT = "happened_at"


@dataclass(frozen=True)
class SolverAnswer:
    answer: str
    support: tuple[int, ...] = ()
    confidence: str = "exact"
    kind: Optional[str] = None
    alternates: tuple[str, ...] = ()
    error: Optional[str] = None
    detail: str = ""

    def __post_init__(self) -> None:
        if self.confidence not in ("exact", "heuristic"):
            raise ValueError(f"unknown confidence {self.confidence!r}")
        if self.confidence == "exact" and not self.support:
            raise ValueError("exact answers need supporting facts")

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        out = {
            "answer": self.answer,
            "support": list(self.support),
            "confidence": self.confidence,
            "kind": self.kind,
        }
        if self.alternates:
            out["alternates"] = list(self.alternates)
        if self.error:
            out["error"] = self.error
            out["detail"] = self.detail
        return out


_ORDINALS = {
    "first": 1, "second": 2, "third": 3, "fourth": 4, "fifth": 5, "sixth": 6,
    "seventh": 7, "eighth": 8, "ninth": 9, "tenth": 10, "eleventh": 11, "twelfth": 12,
    "earliest": 1, "earlier": 1,
}
_LAST_WORDS = ("last", "latest", "later", "final")
_ORDINAL_RE = re.compile(
    r"\b(" + "|".join(list(_ORDINALS) + list(_LAST_WORDS)) + r"|(\d+)(?:st|nd|rd|th))\b", re.IGNORECASE
)
_YEARISH = r"(?:(?:[A-Za-z]+\.?\s+)?\d{1,2},?\s+)?(?:[A-Za-z]+\.?,?\s+)?\d{4}"

_IMMEDIATE_RE = re.compile(
    r"\bimmediately\s+(?P<dir>after|before)\s+(?P<anchor>[^,?]+?)\s*,\s*(?:which|what|who)\s+\w+\s+"
    r"(?:was|were|is)\s+the\s+(?P<rel>\S+)\s+of\s+(?P<obj>[^\s?]+)",
    re.IGNORECASE,
)
_CHRONO_RE = re.compile(
    r"chronological order|\b(?:which|what)\s+event\s+(?:started|happened|occurred|began|came)\s+"
    r"(?:first|earlier|earliest|last|later|latest)",
    re.IGNORECASE,
)
_HAPPENED_RE = re.compile(r"\b(?:happened|occurred|took\s+place)\s+(?:in|during|on)\s+(?P<time>.+?)\s*\??$", re.IGNORECASE)
_RELATIVE_RE = re.compile(r"\b(?P<dir>before|after)\s+(?P<anchor>[^?]+?)\s*\??$", re.IGNORECASE)
_POINT_RE = re.compile(r"\b(?:in|during|on|as of|at)\s+(?P<time>" + _YEARISH + r")\b", re.IGNORECASE)
_WH_RE = re.compile(r"\b(which|what|who|where)\b", re.IGNORECASE)

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation + "“”‘’"})


def _norm(text: str) -> str:
    return " ".join(text.lower().translate(_PUNCT_TABLE).split())


def _contains_phrase(haystack: str, needle: str) -> bool:
    return bool(needle) and f" {needle} " in f" {haystack} "


def classify_question(q: str) -> QuestionKind:
    """Pick a question class from surface patterns; raises :class:`Unclassifiable`."""
    if not q or not q.strip():
        raise Unclassifiable("empty question")
    if _IMMEDIATE_RE.search(q):
        return QuestionKind.IMMEDIATELY_AFTER
    if _CHRONO_RE.search(q):
        return QuestionKind.CHRONOLOGICAL_RANK
    m = _HAPPENED_RE.search(q)
    if m and scan_times(m["time"]):
        return QuestionKind.HAPPENED_AT
    m = _RELATIVE_RE.search(q)
    if m and not re.fullmatch(_YEARISH, m["anchor"].strip()):
        return QuestionKind.RELATIVE_ORDER
    if _WH_RE.search(q) and (_POINT_RE.search(q) or (m and scan_times(m["anchor"]))):
        return QuestionKind.POINT_IN_TIME
    raise Unclassifiable(f"no question pattern matches {q!r}")


# ---------------------------------------------------------------------------
# Chronological rank
# ---------------------------------------------------------------------------


def _match_candidate(candidate: str, facts: Sequence[TemporalFact]) -> list[TemporalFact]:
    c = _norm(candidate)
    exact = [f for f in facts if _norm(f.statement) == c]
    if exact:
        return exact
    return [f for f in facts if c and (_contains_phrase(_norm(f.statement), c) or _contains_phrase(c, _norm(f.statement)))]


def _candidate_key(matched: Sequence[TemporalFact]):
    starts = [f for f in matched if f.start is not None]
    pool = starts if starts else list(matched)
    boundary = (lambda f: f.start) if starts else (lambda f: f.end)
    best = min(pool, key=lambda f: (boundary(f).sort_key, f.source_index))
    return boundary(best).sort_key, best.source_index


def rank_candidates(facts: Sequence[TemporalFact], candidates: Sequence[str]) -> list[tuple[str, list[TemporalFact]]]:
    """Order candidates by their earliest time (start preferred), ties by context position."""
    matched, unmatched = [], []
    for i, cand in enumerate(candidates):
        hits = _match_candidate(cand, facts)
        if hits:
            matched.append((_candidate_key(hits), i, cand, hits))
        else:
            unmatched.append(cand)
    if unmatched:
        raise UnmatchedCandidate(unmatched)
    matched.sort(key=lambda item: (item[0], item[1]))
    return [(cand, hits) for _key, _i, cand, hits in matched]


def answer_chronological_rank(facts: Sequence[TemporalFact], candidates: Sequence[str], k: int) -> SolverAnswer:
    if not 1 <= k <= len(candidates):
        raise ValueError(f"rank {k} outside 1..{len(candidates)}")
    ranked = rank_candidates(facts, candidates)
    cand, hits = ranked[k - 1]
    return SolverAnswer(
        answer=cand,
        support=tuple(sorted(f.source_index for f in hits)),
        kind=QuestionKind.CHRONOLOGICAL_RANK.value,
    )


def extract_candidates(q: str) -> list[str]:
    """Events listed in a question, in parentheses or quotes."""
    found = [" ".join(g.split()) for g in _PAREN_GROUP.findall(q)]
    if not found:
        found = [" ".join(g.split()) for g in re.findall(r"[“\"]([^”\"]+)[”\"]", q)]
    return found


def extract_rank(q: str, n: int) -> int:
    tail = q.split(")")[-1] if ")" in q else q
    m = _ORDINAL_RE.search(tail) or _ORDINAL_RE.search(q)
    if m is None:
        return 1
    word = m.group(1).lower()
    if word in _LAST_WORDS:
        return n
    if m.group(2):
        return int(m.group(2))
    return _ORDINALS[word]


# ---------------------------------------------------------------------------
# Point in time / relative order
# ---------------------------------------------------------------------------


def _le(a: TimePoint, b: TimePoint) -> bool:
    return compare_timepoints(a, b) in (Ordering.BEFORE, Ordering.EQUAL)


def _relation_facts(facts: Sequence[TemporalFact], subject: str, relation: str) -> list[TemporalFact]:
    s, r = _norm(subject), _norm(relation)
    return [
        f for f in facts
        if f.start is not None
        and (not s or _norm(f.subject) == s)
        and (not r or _norm(f.relation) == r)
    ]


def answer_point_in_time(facts: Sequence[TemporalFact], subject: str, relation: str, at: TimePoint) -> SolverAnswer:
    """Holder of ``subject``'s ``relation`` at time ``at``.

    Among intervals that contain ``at`` the latest start wins (a tenure that
    begins in the query year beats one ending in it). With no containing
    interval the most recent start before ``at`` is returned as a heuristic.
    """
    pool = _relation_facts(facts, subject, relation)
    started = [f for f in pool if _le(f.start, at)]
    containing = [f for f in started if f.end is None or _le(at, f.end)]
    for group, confidence in ((containing, "exact"), (started, "heuristic")):
        if group:
            best = max(group, key=lambda f: (f.start.sort_key, f.source_index))
            return SolverAnswer(
                best.obj or best.statement, (best.source_index,), confidence, QuestionKind.POINT_IN_TIME.value
            )
    raise NoMatchingFact(f"no {relation or 'fact'} of {subject or 'any subject'} started by {at}")


def _find_anchor(pool: Sequence[TemporalFact], anchor_object: str) -> list[TemporalFact]:
    a = _norm(anchor_object)
    exact = [f for f in pool if _norm(f.obj) == a]
    if exact:
        return exact
    return [f for f in pool if f.obj and (_contains_phrase(a, _norm(f.obj)) or _contains_phrase(_norm(f.obj), a))]


def answer_relative_order(
    facts: Sequence[TemporalFact], subject: str, relation: str, anchor_object: str, direction: str
) -> SolverAnswer:
    """Object of the fact starting nearest after (or before) the anchor's start."""
    if direction not in ("before", "after"):
        raise ValueError(f"direction must be 'before' or 'after', got {direction!r}")
    pool = _relation_facts(facts, subject, relation)
    anchors = _find_anchor(pool, anchor_object)
    if not anchors:
        raise NoMatchingFact(f"{anchor_object!r} is not an object of any matching fact")
    anchor_objs = {_norm(f.obj) for f in anchors}
    others = [f for f in pool if _norm(f.obj) not in anchor_objs]
    if direction == "after":
        anchor = max(anchors, key=lambda f: (f.start.sort_key, f.source_index))
        later = [f for f in others if f.start.sort_key > anchor.start.sort_key]
        if not later:
            raise NoAdjacentFact(f"nothing starts after {anchor.obj!r}")
        best = min(later, key=lambda f: (f.start.sort_key, f.source_index))
    else:
        anchor = min(anchors, key=lambda f: (f.start.sort_key, f.source_index))
        earlier = [f for f in others if f.start.sort_key < anchor.start.sort_key]
        if not earlier:
            raise NoAdjacentFact(f"nothing starts before {anchor.obj!r}")
        best = max(earlier, key=lambda f: (f.start.sort_key, -f.source_index))
    return SolverAnswer(
        best.obj or best.statement,
        (anchor.source_index, best.source_index),
        "exact",
        QuestionKind.RELATIVE_ORDER.value,
    )


def answer_immediately(
    facts: Sequence[TemporalFact], anchor: str, relation: str, obj: str, direction: str = "after"
) -> SolverAnswer:
    """Holder of ``relation`` of ``obj`` right after (or before) ``anchor``'s tenure.

    The anchor's tenure comes from its facts on the same object and relation,
    falling back to any fact on the same object, then any fact at all. Each
    tenure boundary is tried in time order; a holder starting exactly there is
    preferred over one whose interval merely contains it. Always heuristic.
    """
    a, r, o = _norm(anchor), _norm(relation), _norm(obj)
    holders = [f for f in facts if f.kind == "interval" and _norm(f.relation) == r and _norm(f.obj) == o]
    holders = [f for f in holders if _norm(f.subject) != a]
    own = [f for f in facts if f.kind == "interval" and _norm(f.subject) == a]
    tenure = (
        [f for f in own if _norm(f.obj) == o and _norm(f.relation) == r]
        or [f for f in own if _norm(f.obj) == o]
        or own
    )
    if not tenure:
        raise NoMatchingFact(f"no facts about {anchor!r}")
    if direction == "after":
        marks = sorted({f.end.sort_key: f.end for f in tenure}.items())
        exact_hit = lambda f, t: f.start.sort_key == t.sort_key  # noqa: E731
    else:
        marks = sorted({f.start.sort_key: f.start for f in tenure}.items(), reverse=True)
        exact_hit = lambda f, t: f.end.sort_key == t.sort_key  # noqa: E731
    for rule in ("exact", "contains"):
        for _key, t in marks:
            if rule == "exact":
                hits = [f for f in holders if exact_hit(f, t)]
            else:
                hits = [f for f in holders if _le(f.start, t) and _le(t, f.end)]
            if hits:
                best = min(hits, key=lambda f: f.source_index)
                return SolverAnswer(
                    best.subject,
                    (best.source_index,) + tuple(f.source_index for f in tenure),
                    "heuristic",
                    QuestionKind.IMMEDIATELY_AFTER.value,
                )
    raise NoMatchingFact(f"no {relation} of {obj} adjacent to {anchor}'s tenure")


def answer_happened_at(facts: Sequence[TemporalFact], at: TimePoint) -> SolverAnswer:
    """Events starting at ``at``; events ending then are listed as alternates."""
    starts = [f for f in facts if f.start is not None and compare_timepoints(f.start, at) is Ordering.EQUAL]
    ends = [f for f in facts if f.end is not None and compare_timepoints(f.end, at) is Ordering.EQUAL]
    ordered = starts + [f for f in ends if f not in starts]
    if not ordered:
        raise NoMatchingFact(f"nothing happened in {at}")
    labels = []
    for f in ordered:
        if f.statement not in labels:
            labels.append(f.statement)
    confidence = "exact" if len(labels) == 1 else "heuristic"
    return SolverAnswer(
        labels[0],
        tuple(f.source_index for f in ordered),
        confidence,
        QuestionKind.HAPPENED_AT.value,
        alternates=tuple(labels[1:]),
    )


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def _resolve_subject(facts: Sequence[TemporalFact], q: str) -> str:
    subjects = sorted({f.subject for f in facts if f.subject}, key=len, reverse=True)
    nq = _norm(q)
    for s in subjects:
        if _contains_phrase(nq, _norm(s)):
            return s
    return subjects[0] if len(subjects) == 1 else ""


def _resolve_relation(facts: Sequence[TemporalFact], subject: str, q: str) -> str:
    pool = [f for f in facts if not subject or f.subject == subject]
    relations = sorted({f.relation for f in pool if f.relation}, key=len, reverse=True)
    nq = _norm(q)
    for r in relations:
        if _contains_phrase(nq, _norm(r)):
            return r
    return relations[0] if len(relations) == 1 else ""


def _query_time(q: str) -> Optional[TimePoint]:
    m = _POINT_RE.search(q)
    if m:
        times = scan_times(m["time"])
        if times:
            return times[0]
    times = scan_times(q)
    return times[-1] if times else None


def _heuristic(facts: Sequence[TemporalFact], q: str) -> SolverAnswer:
    at = _query_time(q)
    if at is None or not facts:
        raise NoMatchingFact("question names no time to anchor a heuristic answer")
    best = min(facts, key=lambda f: (abs(f.first_time.year - at.year), f.source_index))
    return SolverAnswer(best.obj or best.statement, (best.source_index,), "heuristic", None)


def _dispatch(kind: QuestionKind, q: str, facts: list[TemporalFact]) -> SolverAnswer:
    if kind is QuestionKind.CHRONOLOGICAL_RANK:
        candidates = extract_candidates(q)
        if not candidates:
            seen: list[str] = []
            for f in facts:
                if f.statement not in seen:
                    seen.append(f.statement)
            candidates = seen
        return answer_chronological_rank(facts, candidates, extract_rank(q, len(candidates)))

    if kind is QuestionKind.HAPPENED_AT:
        return answer_happened_at(facts, scan_times(_HAPPENED_RE.search(q)["time"])[0])

    if kind is QuestionKind.IMMEDIATELY_AFTER:
        m = _IMMEDIATE_RE.search(q)
        return answer_immediately(facts, m["anchor"].strip(), m["rel"], m["obj"], m["dir"].lower())

    subject = _resolve_subject(facts, q)
    relation = _resolve_relation(facts, subject, q)
    rel_match = _RELATIVE_RE.search(q)

    if kind is QuestionKind.RELATIVE_ORDER:
        return answer_relative_order(facts, subject, relation, rel_match["anchor"], rel_match["dir"].lower())

    at = _query_time(q)
    shifted = False
    if rel_match and scan_times(rel_match["anchor"]) and not _POINT_RE.search(q):
        # "before 1778" / "after 1778": query the adjacent year.
        base = scan_times(rel_match["anchor"])[0]
        at = TimePoint(base.year - 1 if rel_match["dir"].lower() == "before" else base.year + 1)
        shifted = True
    ans = answer_point_in_time(facts, subject, relation, at)
    if shifted or not subject:
        ans = SolverAnswer(ans.answer, ans.support, "heuristic", ans.kind)
    return ans


def solve_facts(q: str, facts: Sequence[TemporalFact]) -> SolverAnswer:
    """Classify ``q`` and answer it from already-parsed ``facts``."""
    facts = list(facts)
    try:
        if not facts:
            raise NoMatchingFact("context yields no temporal facts")
        try:
            kind = classify_question(q)
        except Unclassifiable:
            return _heuristic(facts, q)
        return _dispatch(kind, q, facts)
    except TiserError as exc:
        return SolverAnswer("", (), "heuristic", None, error=exc.code, detail=str(exc))
    except ValueError as exc:
        return SolverAnswer("", (), "heuristic", None, error="InvalidQuestion", detail=str(exc))


def solve(q: str, context: str) -> SolverAnswer:
    """Parse ``context`` and answer ``q``; failures come back as a structured answer."""
    return solve_facts(q, parse_context(context).facts)
