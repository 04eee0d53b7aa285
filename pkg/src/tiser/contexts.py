"""Parsing and rendering of temporal contexts.

Three benchmark grammars are recognised:

* ``tgqa_tuple`` -- ``(Amy Johnson was born in Willowdale, Kansas) starts at 1880``
* ``interval_colon`` -- ``2006 - 2007 : Taylor Graham's team is ( New York Red Bulls )``
* ``tot_symbolic`` -- ``E11 was the R17 of E69 from 1946 to 1950``

Anything else is ``unknown``: each sentence becomes a statement-only fact
timed by the dates it mentions, or lands in ``residual`` when it has none.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import HasResidual
from .temporal import TemporalFact, TimePoint

FORMATS = ("tgqa_tuple", "interval_colon", "tot_symbolic", "unknown")

_MONTHS = {
    "january": 1, "february": 2, "march": 3, "april": 4, "may": 5, "june": 6,
    "july": 7, "august": 8, "september": 9, "october": 10, "november": 11, "december": 12,
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "jun": 6, "jul": 7, "aug": 8,
    "sep": 9, "sept": 9, "oct": 10, "nov": 11, "dec": 12,
}
_MONTH_ALT = "|".join(sorted(_MONTHS, key=len, reverse=True))

_ISO = r"(?P<iy>\d{4})-(?P<im>\d{2})-(?P<id>\d{2})(?:T[0-9:.]+(?:Z|[+-]\d{2}:?\d{2})?)?"
_MDY = rf"(?P<am>{_MONTH_ALT})\.?\s+(?P<ad>\d{{1,2}}),?\s+(?P<ay>\d{{4}})"
_DMY = rf"(?P<bd>\d{{1,2}})\s+(?P<bm>{_MONTH_ALT})\.?,?\s+(?P<by>\d{{4}})"
_MY = rf"(?P<cm>{_MONTH_ALT})\.?,?\s+(?P<cy>\d{{4}})"
_Y = r"(?P<yy>\d{4})"
_TIME = rf"(?:{_ISO}|{_MDY}|{_DMY}|{_MY}|{_Y})"
_TIME_RE = re.compile(rf"(?<![\w-]){_TIME}(?![\w])", re.IGNORECASE)
_TIME_FULL = re.compile(rf"\s*{_TIME}\s*", re.IGNORECASE)

# Plain time text for use inside larger grammars (no named groups).
_T = re.sub(r"\?P<\w+>", "", _TIME)

_TGQA = re.compile(
    rf"^(?P<stmts>\((?:[^()]|\([^()]*\))+\)(?:\s*(?:,|and|,\s*and)\s*\((?:[^()]|\([^()]*\))+\))*)"
    rf"\s+(?P<verb>starts|ends|start|end)\s+at\s+(?P<time>{_T})$",
    re.IGNORECASE,
)
_PAREN_GROUP = re.compile(r"\(((?:[^()]|\([^()]*\))+)\)")
_COLON = re.compile(rf"^(?P<t1>{_T})\s*-\s*(?P<t2>{_T})\s*:\s*(?P<rest>\S.*)$", re.IGNORECASE)
_POSSESSIVE = re.compile(r"^(?P<subj>.+?)['’]s\s+(?P<rel>.+?)\s+is\s+(?:\(\s*(?P<pobj>.+?)\s*\)|(?P<obj>.+))$")
_TOT = re.compile(
    r"^(?P<subj>\S+) was the (?P<rel>\S+) of (?P<obj>\S+) from (?P<t1>-?\d{1,4}) to (?P<t2>-?\d{1,4})$"
)
_STATEMENT_SPLIT = re.compile(
    r"^(?P<subj>(?:[A-Z][\w'’.-]*\s+)*?[A-Z][\w'’.-]*)\s+"
    r"(?P<rel>(?:[a-z][\w'’-]*\s+)*?(?:in|to|at|of|by|with|for|from|on|as))\s+(?P<obj>\S.*)$"
)
_PREAMBLE = re.compile(r"^(?P<pre>[A-Za-z][^.:\d()\[\]]*:)\s*(?=\S)")
_ENUMERATOR = re.compile(r"^\s*\d{1,2}\s*[.)]\s+|^\s*[-*•]\s+")
_ISO_CHUNK_END = re.compile(r"\(\s*\d{4}-\d{2}-\d{2}T[^()]*\)\s*\.?")
_TRAILING_TIME = re.compile(rf"^(?P<stmt>.*\S)\s*\((?P<time>\s*{_T}\s*(?:[-\u2013\u2014]\s*{_T}\s*)?)\)$", re.IGNORECASE)


@dataclass(frozen=True)
class ParsedContext:
    """Facts and unparseable clauses recovered from one context.

    ``clause_count`` equals ``len(facts) + len(residual)``.
    """

    format: str
    facts: tuple[TemporalFact, ...]
    residual: tuple[str, ...] = ()
    preamble: str = ""

    @property
    def clause_count(self) -> int:
        return len(self.facts) + len(self.residual)

    def to_dict(self) -> dict:
        return {
            "format": self.format,
            "preamble": self.preamble,
            "facts": [f.to_dict() for f in self.facts],
            "residual": list(self.residual),
        }


def _norm(text: str) -> str:
    return " ".join(text.split())


def _match_to_time(m: re.Match) -> Optional[TimePoint]:
    g = m.groupdict()
    try:
        if g.get("iy"):
            return TimePoint(int(g["iy"]), int(g["im"]), int(g["id"]))
        if g.get("ay"):
            return TimePoint(int(g["ay"]), _MONTHS[g["am"].lower()], int(g["ad"]))
        if g.get("by"):
            return TimePoint(int(g["by"]), _MONTHS[g["bm"].lower()], int(g["bd"]))
        if g.get("cy"):
            return TimePoint(int(g["cy"]), _MONTHS[g["cm"].lower()])
        if g.get("yy"):
            return TimePoint(int(g["yy"]))
    except ValueError:
        return None
    return None


def parse_time(text: str) -> Optional[TimePoint]:
    """Parse a lone time expression such as ``1908``, ``May 2007`` or ``Feb 2014``."""
    m = _TIME_FULL.fullmatch(text)
    if m is None:
        try:
            return TimePoint(int(text.strip()))
        except ValueError:
            return None
    return _match_to_time(m)


def scan_times(text: str) -> list[TimePoint]:
    """All time expressions in ``text``, in order of appearance."""
    out = []
    for m in _TIME_RE.finditer(text):
        tp = _match_to_time(m)
        if tp is not None:
            out.append(tp)
    return out


def split_statement(statement: str) -> tuple[str, str, str]:
    """Best-effort (subject, relation, object) split of a TGQA statement."""
    m = _STATEMENT_SPLIT.match(statement)
    if m is None:
        return "", "", ""
    return m["subj"], m["rel"], m["obj"]


# ---------------------------------------------------------------------------
# Clause splitting
# ---------------------------------------------------------------------------


def _split_on_periods(text: str) -> list[str]:
    pieces, buf, depth = [], [], 0
    n = len(text)
    for i, ch in enumerate(text):
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth = max(0, depth - 1)
        if ch == "." and depth == 0:
            prev = text[i - 1] if i > 0 else ""
            nxt = text[i + 1] if i + 1 < n else ""
            if nxt == "" or nxt.isspace() or nxt == "(" or (nxt.isdigit() and not prev.isdigit()):
                pieces.append("".join(buf))
                buf = []
                continue
        buf.append(ch)
    pieces.append("".join(buf))
    return pieces


def _split_iso_chunks(text: str) -> list[str]:
    pieces, last = [], 0
    for m in _ISO_CHUNK_END.finditer(text):
        chunk = text[last:m.end()].rstrip()
        if chunk.endswith("."):
            chunk = chunk[:-1]
        pieces.append(chunk)
        last = m.end()
    pieces.append(text[last:])
    return pieces


def _is_separator(fragment: str) -> bool:
    return re.fullmatch(r"[\s\d.,;:)\]\-*•\"']*", fragment) is not None and not re.search(r"\d{3}", fragment)


def _expand_tgqa(clause: str) -> list[str]:
    """``(A) and (B) start at 1914`` -> two single-statement clauses."""
    m = _TGQA.match(clause)
    if m is None:
        return [clause]
    groups = _PAREN_GROUP.findall(m["stmts"])
    if len(groups) <= 1:
        return [clause]
    verb = "starts" if m["verb"].lower().startswith("start") else "ends"
    return [f"({g}) {verb} at {m['time']}" for g in groups]


def _from_json_list(text: str) -> Optional[list[str]]:
    stripped = text.strip()
    if not (stripped.startswith("[") and stripped.endswith("]")):
        return None
    try:
        items = json.loads(stripped)
    except ValueError:
        return None
    if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
        return None
    return items


def split_clauses(text: str) -> list[str]:
    """Split context text into clauses (enumerators and bare punctuation dropped)."""
    items = _from_json_list(text)
    if items is None:
        if _ISO_CHUNK_END.search(text):
            items = _split_iso_chunks(text)
        else:
            items = _split_on_periods(text)
    clauses = []
    for item in items:
        frag = re.sub(r"[\s.…]+$", "", _norm(_ENUMERATOR.sub("", item, count=1)))
        if not frag or _is_separator(frag):
            continue
        clauses.extend(_expand_tgqa(frag))
    return clauses


def _split_preamble(text: str) -> tuple[str, str]:
    m = _PREAMBLE.match(text.strip())
    if m is None:
        return "", text
    return _norm(m["pre"]), text.strip()[m.end():]


# ---------------------------------------------------------------------------
# Per-grammar clause parsers
# ---------------------------------------------------------------------------


def _parse_tgqa(clause: str, index: int) -> Optional[TemporalFact]:
    m = _TGQA.match(clause)
    if m is None:
        return None
    groups = _PAREN_GROUP.findall(m["stmts"])
    tp = parse_time(m["time"])
    if len(groups) != 1 or tp is None:
        return None
    statement = _norm(groups[0])
    subj, rel, obj = split_statement(statement)
    if m["verb"].lower().startswith("start"):
        kind, start, end = "point_start", tp, None
    else:
        kind, start, end = "point_end", None, tp
    return TemporalFact(statement, kind, start, end, subj, rel, obj, index)


def _parse_colon(clause: str, index: int) -> Optional[TemporalFact]:
    m = _COLON.match(clause)
    if m is None:
        return None
    t1, t2 = parse_time(m["t1"]), parse_time(m["t2"])
    if t1 is None or t2 is None:
        return None
    statement = _norm(m["rest"])
    subj = rel = obj = ""
    pm = _POSSESSIVE.match(statement)
    if pm is not None:
        subj, rel = pm["subj"].strip(), pm["rel"].strip()
        obj = (pm["pobj"] or pm["obj"]).strip()
    return TemporalFact(statement, "interval", t1, t2, subj, rel, obj, index)


def _parse_tot(clause: str, index: int) -> Optional[TemporalFact]:
    m = _TOT.match(clause)
    if m is None:
        return None
    try:
        t1, t2 = TimePoint(int(m["t1"])), TimePoint(int(m["t2"]))
    except ValueError:
        return None
    statement = f"{m['subj']} was the {m['rel']} of {m['obj']}"
    return TemporalFact(statement, "interval", t1, t2, m["subj"], m["rel"], m["obj"], index)


def _parse_free(clause: str, index: int) -> Optional[TemporalFact]:
    statement = clause
    times: list[TimePoint] = []
    m = _TRAILING_TIME.match(clause)
    if m is not None:
        times = scan_times(m["time"])
        if times:
            statement = m["stmt"]
    if not times:
        times = scan_times(clause)
    if not times:
        return None
    first, last = times[0], times[-1]
    if len(times) > 1 and last.sort_key > first.sort_key:
        return TemporalFact(statement, "interval", first, last, source_index=index, clause=clause)
    return TemporalFact(statement, "point_start", first, source_index=index, clause=clause)


_GRAMMARS = {
    "tgqa_tuple": _parse_tgqa,
    "interval_colon": _parse_colon,
    "tot_symbolic": _parse_tot,
}


def _safe(parser, clause: str, index: int) -> Optional[TemporalFact]:
    try:
        return parser(clause, index)
    except ValueError:
        return None


def _detect(clauses: list[str]) -> str:
    best, best_hits = "unknown", 0
    for name, parser in _GRAMMARS.items():
        hits = sum(1 for i, c in enumerate(clauses) if _safe(parser, c, i) is not None)
        if hits > best_hits:
            best, best_hits = name, hits
    return best


def _segment(context: str) -> tuple[str, list[str], str]:
    """Return (preamble, clauses, format) for ``context``.

    A leading ``Label text:`` preamble is split off when the remainder then
    parses under a known grammar.
    """
    pre, rest = _split_preamble(context)
    if pre:
        rest_clauses = split_clauses(rest)
        rest_fmt = _detect(rest_clauses)
        if rest_fmt != "unknown":
            return pre, rest_clauses, rest_fmt
    clauses = split_clauses(context)
    return "", clauses, _detect(clauses)


def detect_format(context: str) -> str:
    """Name the grammar that matches the most clauses of ``context``."""
    return _segment(context or "")[2]


def parse_context(context: str, lenient: bool = False) -> ParsedContext:
    """Parse ``context`` into facts; clauses that fit no grammar go to ``residual``.

    With ``lenient`` set, clauses that miss the detected grammar are retried
    against the other grammars and then the free-text date scan. Model-written
    timelines mix forms, so :func:`tiser.traces.extract_timeline` uses this.
    """
    preamble, clauses, fmt = _segment(context or "")
    if fmt == "unknown":
        order = [_parse_free]
    else:
        order = [_GRAMMARS[fmt]]
        if lenient:
            order += [p for name, p in _GRAMMARS.items() if name != fmt] + [_parse_free]

    facts, residual = [], []
    for i, clause in enumerate(clauses):
        fact = None
        for parser in order:
            fact = _safe(parser, clause, i)
            if fact is not None:
                break
        if fact is None:
            residual.append(clause)
        else:
            facts.append(fact)
    return ParsedContext(fmt, tuple(facts), tuple(residual), preamble)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_fact(fact: TemporalFact) -> str:
    if fact.clause:
        return fact.clause
    if fact.kind == "interval":
        if _TOT.match(f"{fact.statement} from {fact.start} to {fact.end}") and fact.subject:
            return f"{fact.statement} from {fact.start} to {fact.end}"
        return f"{fact.start} - {fact.end} : {fact.statement}"
    if fact.kind == "point_start":
        return f"({fact.statement}) starts at {fact.start}"
    return f"({fact.statement}) ends at {fact.end}"


def render_context(parsed: ParsedContext) -> str:
    """Serialise facts back to text in the inline, period-separated form."""
    if parsed.residual:
        raise HasResidual(f"{len(parsed.residual)} unparsed clause(s): {list(parsed.residual)[:3]}")
    if not parsed.facts:
        return ""
    body = " ".join(render_fact(f) + "." for f in parsed.facts)
    return f"{parsed.preamble} {body}" if parsed.preamble else body
