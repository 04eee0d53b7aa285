"""Seeded generator of small temporal QA instances with known answers.

Instances use the same context grammars the parser accepts, so they exercise
the whole stack: chronological-rank questions over ``starts at`` / ``ends
at`` tuples, and point-in-time or before/after questions over career
intervals written as ``Y1 - Y2 : X's team is ( T )``.
"""

from __future__ import annotations

import calendar
import random
from dataclasses import dataclass
from typing import Optional

FIRST_NAMES = (
    "Amy", "Lucas", "Megan", "Olivia", "Conor", "Taylor", "Priya", "Hector", "Ingrid", "Tomas",
    "Yuki", "Nadia", "Oscar", "Freya", "Mateo", "Leila", "Rufus", "Sonia", "Bram", "Elena",
)
LAST_NAMES = (
    "Johnson", "Prescott", "Peterson", "Price", "Sammon", "Graham", "Okafor", "Lindqvist", "Moreau",
    "Tanaka", "Castillo", "Varga", "Holloway", "Brandt", "Quinlan", "Achebe", "Novak", "Whitlock",
)
PLACES = (
    "Harrisonburg", "Willowdale", "Northampton", "Oceanview", "Millwood", "Harmonyville", "Bristol",
    "Cedar Falls", "Port Ellis", "Granite Bay", "Ashford", "Kingsmere", "Larkspur", "Riverton",
)
TEAMS = (
    "Kilmarnock", "Wigan Athletic", "Derby County", "Ipswich Town", "Seattle Sounders",
    "New York Red Bulls", "Kansas City Wizards", "Rotherham United", "Falkirk", "Motherwell",
    "Portland Timbers", "Columbus Crew", "Hibernian", "Brentford", "Stockport County", "Dundee",
)
EMPLOYERS = (
    "Acme Mills", "Northwind Bank", "Harbor Press", "Summit Labs", "Bluefield Rail", "Orion Textiles",
    "Crescent Foods", "Ironvale Steel", "Lumen Optics", "Meridian Shipping", "Pinecrest Clinic",
)
POSITIONS = (
    "Surveyor", "Colonel", "Delegate", "Treasurer", "Governor", "Magistrate", "Envoy",
    "Commissioner", "Senator", "Ambassador", "Chancellor", "Secretary of State",
)

# relation -> (object pool, point-in-time question, relative-order question)
CAREER_RELATIONS = {
    "team": (TEAMS, "Which team did {s} play for in {t}?", "What team did {s} play for {d} {a}?"),
    "employer": (EMPLOYERS, "Which employer did {s} work for in {t}?", "Which employer did {s} work for {d} {a}?"),
    "position": (POSITIONS, "What position did {s} hold in {t}?", "Which position did {s} hold {d} {a}?"),
}

_ORDINAL_WORDS = ("first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth")
_COUNT_WORDS = ("one", "two", "three", "four", "five", "six", "seven", "eight")

KINDS = ("chronological_rank", "point_in_time", "relative_order")
YEAR_MIN, YEAR_MAX = 1900, 2000
MAX_ENTITIES = 8
MAX_FACTS = 12


@dataclass(frozen=True)
class SyntheticInstance:
    id: str
    question: str
    answer: str
    context: str
    dataset: str
    kind: str
    n_entities: int
    n_facts: int

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "answer": self.answer,
            "context": self.context,
            "dataset": self.dataset,
        }


def _people(rng: random.Random, n: int) -> list[str]:
    firsts = rng.sample(FIRST_NAMES, n)
    return [f"{f} {rng.choice(LAST_NAMES)}" for f in firsts]


def _rank_instance(rng: random.Random) -> Optional[tuple[str, str, str, int, int]]:
    n_people = rng.randint(1, 3)
    people = _people(rng, n_people)
    places = iter(rng.sample(PLACES, len(PLACES)))
    events: list[tuple[str, int, Optional[int]]] = []
    for p in people:
        born = rng.randint(YEAR_MIN, 1950)
        events.append((f"{p} was born in {next(places)}", born, None))
        if rng.random() < 0.6:
            events.append((f"{p} died in {next(places)}", rng.randint(born + 20, YEAR_MAX), None))
    if n_people >= 2 and rng.random() < 0.7:
        a, b = rng.sample(people, 2)
        start = rng.randint(1920, 1990)
        end = rng.randint(start, YEAR_MAX)
        events.append((f"{a} was married to {b}", start, end))

    starts = [start for _s, start, _e in events]
    if len(set(starts)) != len(starts) or len(events) < 2:
        return None
    n_places = sum(1 for stmt, _st, _e in events if " in " in stmt)
    if n_people + n_places > MAX_ENTITIES:
        return None
    n_facts = sum(1 + (end is not None) for _s, _st, end in events)
    if n_facts > MAX_FACTS:
        return None

    clauses = [(start, f"({stmt}) starts at {start}") for stmt, start, _e in events]
    clauses += [(end, f"({stmt}) ends at {end}") for stmt, _st, end in events if end is not None]
    clauses.sort(key=lambda c: c[0])
    context = ". ".join(text for _y, text in clauses) + "."

    candidates = [stmt for stmt, _st, _e in events]
    rng.shuffle(candidates)
    k = rng.randint(1, len(candidates))
    answer = sorted(events, key=lambda e: e[1])[k - 1][0]
    listed = ", ".join(f"({c})" for c in candidates)
    question = (
        f"Given the following {_COUNT_WORDS[len(candidates) - 1]} events: {listed}. "
        f"Which event is the {_ORDINAL_WORDS[k - 1]} one in chronological order?"
    )
    return question, answer, context, n_people + n_places, n_facts


def _career(rng: random.Random, objects: list[str], contiguous: bool) -> list[tuple[int, int, str]]:
    n = len(objects)
    starts = sorted(rng.sample(range(YEAR_MIN, YEAR_MAX - 2), n))
    spans = []
    for i, (start, obj) in enumerate(zip(starts, objects)):
        nxt = starts[i + 1] if i + 1 < n else min(YEAR_MAX, start + rng.randint(1, 10))
        end = nxt if contiguous or i + 1 == n else rng.randint(start, nxt)
        spans.append((start, end, obj))
    return spans


def _career_context(subject_spans: list[tuple[str, str, list[tuple[int, int, str]]]]) -> str:
    clauses = []
    for subject, relation, spans in subject_spans:
        for start, end, obj in spans:
            clauses.append((start, f"{start} - {end} : {subject}'s {relation} is ( {obj} )"))
    clauses.sort(key=lambda c: c[0])
    return ". ".join(text for _y, text in clauses) + "."


def _career_instance(rng: random.Random, kind: str, monthly: bool):
    relation = rng.choice(sorted(CAREER_RELATIONS))
    pool, pit_template, rel_template = CAREER_RELATIONS[relation]
    subjects = _people(rng, rng.randint(1, 2))
    budget = rng.randint(2 * len(subjects), MAX_ENTITIES - len(subjects))
    sizes = [budget // len(subjects)] * len(subjects)
    sizes[0] += budget - sum(sizes)
    objects = rng.sample(pool, sum(sizes))
    per_subject = []
    offset = 0
    for subject, size in zip(subjects, sizes):
        chunk = objects[offset:offset + size]
        offset += size
        per_subject.append((subject, relation, _career(rng, chunk, contiguous=rng.random() < 0.7)))
    target_subject, _rel, spans = per_subject[0]
    context = _career_context(per_subject)
    n_entities = len(subjects) + len(objects)
    n_facts = len(objects)
    if n_entities > MAX_ENTITIES or n_facts > MAX_FACTS:
        return None

    if kind == "point_in_time":
        year = rng.randint(spans[0][0], spans[-1][1])
        containing = [s for s in spans if s[0] <= year <= s[1]]
        started = [s for s in spans if s[0] <= year]
        answer = max(containing or started, key=lambda s: s[0])[2]
        when = str(year)
        if monthly:
            when = f"{calendar.month_name[rng.randint(1, 12)]} {year}"
        question = pit_template.format(s=target_subject, t=when)
    else:
        direction = rng.choice(("before", "after"))
        idx = rng.randrange(1, len(spans)) if direction == "before" else rng.randrange(0, len(spans) - 1)
        anchor = spans[idx][2]
        answer = spans[idx - 1][2] if direction == "before" else spans[idx + 1][2]
        question = rel_template.format(s=target_subject, d=direction, a=anchor)
    return question, answer, context, n_entities, n_facts


_DATASET_FOR = {
    "chronological_rank": ("tgqa",),
    "point_in_time": ("tempreason_l2", "timeqa_easy"),
    "relative_order": ("tempreason_l3",),
}


def generate_instances(n: int, seed: int = 0, kinds=KINDS) -> list[SyntheticInstance]:
    """Return ``n`` distinct instances; the same ``seed`` always yields the same list."""
    rng = random.Random(seed)
    kinds = tuple(kinds)
    out: list[SyntheticInstance] = []
    seen: set[tuple[str, str]] = set()
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 50 * n + 1000:
            raise RuntimeError(f"could only generate {len(out)} distinct instances")
        kind = kinds[len(out) % len(kinds)]
        dataset = rng.choice(_DATASET_FOR[kind])
        if kind == "chronological_rank":
            made = _rank_instance(rng)
        else:
            made = _career_instance(rng, kind, monthly=dataset == "timeqa_easy")
        if made is None:
            continue
        question, answer, context, n_entities, n_facts = made
        if (question, context) in seen:
            continue
        seen.add((question, context))
        out.append(
            SyntheticInstance(
                id=f"syn-{seed}-{len(out):05d}",
                question=question,
                answer=answer,
                context=context,
                dataset=dataset,
                kind=kind,
                n_entities=n_entities,
                n_facts=n_facts,
            )
        )
    return out
