"""Prompt rendering and parsing of tag-structured model output.

Outputs follow the tag layout::

    <reasoning> ... <timeline> ... </timeline> <reflection> ... </reflection> </reasoning>
    <answer> ... </answer>

The parser is tolerant: an unclosed tag closes at the next tag that cannot
nest inside it, or at end of text, and only the last ``<answer>`` counts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .contexts import parse_context
from .errors import MissingAnswerTag, UnparseableTimeline
from .temporal import Timeline, entry_timeline

STAGES = ("reasoning", "timeline", "reflection")
MODES = ("standard", "tiser", "tiser_with_gold", "ablation")

_TAG_RE = re.compile(r"<\s*(/?)\s*(reasoning|timeline|reflection|answer)\s*>", re.IGNORECASE)
_LEAVES = ("timeline", "reflection", "answer")


# ---------------------------------------------------------------------------
# Prompts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptSpec:
    mode: str
    question: str
    context: str
    gold_answer: Optional[str] = None
    ablation_stages: frozenset = frozenset(STAGES)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown prompt mode {self.mode!r}")
        if (self.gold_answer is not None) != (self.mode == "tiser_with_gold"):
            raise ValueError("gold_answer is required for, and only for, mode 'tiser_with_gold'")
        object.__setattr__(self, "ablation_stages", frozenset(self.ablation_stages))
        unknown = self.ablation_stages - set(STAGES)
        if unknown:
            raise ValueError(f"unknown ablation stages {sorted(unknown)}")


def load_template(name: str, template_dir: Optional[Path] = None) -> str:
    """Read ``<name>.txt`` from ``template_dir`` or from the packaged defaults."""
    if template_dir is not None:
        path = Path(template_dir) / f"{name}.txt"
        if path.exists():
            return path.read_text(encoding="utf-8")
    return resources.files("tiser.templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def fill_template(template: str, **values: Optional[str]) -> str:
    """Substitute ``{name}`` placeholders.

    A line whose placeholder value is ``None`` is dropped entirely, which is
    how the gold-answer instruction disappears outside data generation.
    """
    lines = []
    for line in template.splitlines(keepends=True):
        if any(f"{{{k}}}" in line and v is None for k, v in values.items()):
            continue
        for k, v in values.items():
            if v is not None:
                line = line.replace(f"{{{k}}}", v)
        lines.append(line)
    return "".join(lines).rstrip("\n")


_STEP_TEXT = {
    "reasoning": "Reason through the problem step by step within the <reasoning> tags.",
    "timeline": (
        "{lead}identify relevant temporal events in the given context for answering the given "
        "question within <timeline> tags. Assume relations in the context are unidirectional."
    ),
    "reflection": (
        "Reflect on your {what} to check for any errors or improvements within the <reflection> tags."
    ),
}


def _ablation_prompt(spec: PromptSpec) -> str:
    stages = [s for s in STAGES if s in spec.ablation_stages]
    steps = []
    for stage in stages:
        text = _STEP_TEXT[stage]
        if stage == "timeline":
            lead = "Given your previous reasoning, " if "reasoning" in stages else ""
            text = text.format(lead=lead)
            text = text[0].upper() + text[1:]
        elif stage == "reflection":
            what = " and ".join(
                w for w, s in (("reasoning", "reasoning"), ("the timeline", "timeline")) if s in stages
            ) or "approach"
            text = text.format(what=what)
        steps.append(text)
    if "reflection" in stages:
        steps.append("Make any necessary adjustments based on your reflection.")
    steps.append(
        "Provide your final, concise answer within the <answer> tags. If the answer is a number, "
        "just output the number, nothing else. Otherwise, output the entity or event without any "
        "additional comments."
    )
    head = "You are an AI assistant that answers queries about temporal contexts. Follow these steps:"
    lines = [head, ""] + [f"{i}. {s}" for i, s in enumerate(steps, 1)]
    lines += ["", "Additional Instructions:"]
    if stages:
        tags = ", ".join(f"<{s}>" for s in stages)
        lines.append(f"- The {tags} sections are for your internal reasoning process.")
    lines.append("- The response to the query must be entirely contained within the <answer> tags.")
    lines += ["", "Response Format:"]
    inner = []
    if "timeline" in stages:
        inner.append("<timeline> [Relevant temporal events for answering the given question.]</timeline>")
    if "reflection" in stages:
        inner.append("<reflection>\n[Your reflection, checking for errors or changes required.]\n</reflection>")
    if "reasoning" in stages:
        lines.append("<reasoning>\n[Your step-by-step reasoning goes here.]")
        lines += inner
        lines.append("</reasoning>")
    else:
        lines += inner
    lines.append("<answer> [Your final, concise answer to the query.]</answer>")
    lines += ["", "Question: {question}", "", "Temporal Context: {context}"]
    return fill_template("\n".join(lines), question=spec.question, context=spec.context)


def render_prompt(spec: PromptSpec, template_dir: Optional[Path] = None) -> str:
    if not spec.question.strip() or not spec.context.strip():
        raise ValueError("question and context must be non-empty")
    if spec.mode == "standard":
        template = load_template("standard", template_dir)
    elif spec.mode == "ablation":
        return _ablation_prompt(spec)
    else:
        template = load_template("tiser", template_dir)
    return fill_template(template, question=spec.question, context=spec.context, gold=spec.gold_answer)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Round:
    reasoning: str = ""
    timeline: str = ""
    reflection: str = ""
    tags: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {"reasoning": self.reasoning, "timeline": self.timeline, "reflection": self.reflection}


@dataclass(frozen=True)
class Trace:
    rounds: tuple[Round, ...]
    answer: str
    raw: str = ""
    outside_text: str = ""

    @property
    def final_round(self) -> Optional[Round]:
        return self.rounds[-1] if self.rounds else None

    def to_dict(self) -> dict:
        return {"rounds": [r.to_dict() for r in self.rounds], "answer": self.answer}


@dataclass(frozen=True)
class TraceValidation:
    well_formed: bool
    missing_tags: frozenset
    extra_text_outside_tags: bool
    round_count: int


@dataclass
class _RoundBuf:
    parts: dict = field(default_factory=lambda: {s: [] for s in STAGES})
    tags: set = field(default_factory=set)


def _tokens(raw: str):
    """Yield ("text", chunk) and ("open"/"close", tag) items."""
    pos = 0
    for m in _TAG_RE.finditer(raw):
        if m.start() > pos:
            yield "text", raw[pos:m.start()]
        yield ("close" if m.group(1) else "open"), m.group(2).lower()
        pos = m.end()
    if pos < len(raw):
        yield "text", raw[pos:]


def _walk(raw: str):
    """Drive the tolerant tag grammar, yielding (bucket, round_index, text) for each text chunk.

    ``bucket`` is a stage name, ``"answer"``, or ``"other"`` for text outside
    every tag. Answer chunks carry the index of the answer block instead.
    """
    stack: list[str] = []
    rounds: list[_RoundBuf] = []
    answers = -1

    def new_round():
        rounds.append(_RoundBuf())

    for kind, value in _tokens(raw):
        if kind == "text":
            if not stack:
                yield "other", -1, value, rounds
            elif stack[-1] == "answer":
                yield "answer", answers, value, rounds
            else:
                yield stack[-1], len(rounds) - 1, value, rounds
        elif kind == "open":
            if value == "answer":
                stack.clear()
                answers += 1
                stack.append("answer")
                yield "answer-open", answers, "", rounds
            elif value == "reasoning":
                stack.clear()
                if not rounds or rounds[-1].tags:
                    new_round()
                rounds[-1].tags.add("reasoning")
                stack.append("reasoning")
            else:
                while stack and stack[-1] in _LEAVES:
                    stack.pop()
                if not rounds or value in rounds[-1].tags:
                    stack.clear()
                    new_round()
                rounds[-1].tags.add(value)
                stack.append(value)
        else:
            if value in stack:
                while stack:
                    if stack.pop() == value:
                        break


def parse_trace(raw: str) -> Trace:
    """Split a completion into reasoning rounds and the final answer.

    A new round starts at every ``<reasoning>`` after the first and whenever a
    timeline or reflection tag repeats within the current round.
    """
    raw = raw or ""
    answers: list[list[str]] = []
    outside: list[str] = []
    rounds_ref: list[_RoundBuf] = []
    for bucket, idx, text, rounds in _walk(raw):
        rounds_ref = rounds
        if bucket == "answer-open":
            answers.append([])
        elif bucket == "answer":
            answers[idx].append(text)
        elif bucket == "other":
            outside.append(text)
        else:
            rounds[idx].parts[bucket].append(text)
    if not answers:
        raise MissingAnswerTag("no <answer> tag in model output")
    rounds = tuple(
        Round(
            reasoning="".join(r.parts["reasoning"]).strip(),
            timeline="".join(r.parts["timeline"]).strip(),
            reflection="".join(r.parts["reflection"]).strip(),
            tags=frozenset(r.tags),
        )
        for r in rounds_ref
    )
    return Trace(rounds, "".join(answers[-1]).strip(), raw, "".join(outside).strip())


def required_tags(mode: str, stages: Optional[Iterable[str]] = None) -> frozenset:
    if mode == "standard":
        return frozenset()
    if mode == "ablation":
        return frozenset(stages if stages is not None else STAGES)
    return frozenset(STAGES)


def validate_trace(trace: Trace, mode: str = "tiser", stages: Optional[Iterable[str]] = None) -> TraceValidation:
    required = required_tags(mode, stages)
    missing: set[str] = set()
    if required and not trace.rounds:
        missing |= required
    for r in trace.rounds:
        missing |= required - r.tags
    if not trace.answer:
        missing.add("answer")
    return TraceValidation(
        well_formed=not missing,
        missing_tags=frozenset(missing),
        extra_text_outside_tags=bool(trace.outside_text),
        round_count=len(trace.rounds),
    )


def extract_timeline(trace: Trace) -> Timeline:
    """Parse the final round's ``<timeline>`` text into an entry-ordered timeline."""
    if not trace.rounds:
        raise UnparseableTimeline("trace has no reasoning rounds")
    text = trace.rounds[-1].timeline
    if not text.strip():
        raise UnparseableTimeline("final round has an empty timeline")
    parsed = parse_context(text, lenient=True)
    if not parsed.facts:
        raise UnparseableTimeline("no temporal events found in timeline", parsed.residual)
    return entry_timeline(parsed.facts)


# ---------------------------------------------------------------------------
# Serialisation and token accounting
# ---------------------------------------------------------------------------


def format_target(rounds: Iterable[Round], answer: str) -> str:
    """Serialise rounds and an answer in the canonical nested tag layout."""
    body = "".join(
        f"<reasoning>{r.reasoning}<timeline>{r.timeline}</timeline>"
        f"<reflection>{r.reflection}</reflection></reasoning>"
        for r in rounds
    )
    return f"{body}<answer>{answer}</answer>"


@dataclass(frozen=True)
class TokenCounts:
    reasoning: int = 0
    timeline: int = 0
    reflection: int = 0
    answer: int = 0
    other: int = 0

    @property
    def total(self) -> int:
        return self.reasoning + self.timeline + self.reflection + self.answer + self.other

    def __add__(self, other: "TokenCounts") -> "TokenCounts":
        return TokenCounts(
            self.reasoning + other.reasoning,
            self.timeline + other.timeline,
            self.reflection + other.reflection,
            self.answer + other.answer,
            self.other + other.other,
        )

    def to_dict(self) -> dict:
        return {
            "reasoning": self.reasoning,
            "timeline": self.timeline,
            "reflection": self.reflection,
            "answer": self.answer,
            "other": self.other,
            "total": self.total,
        }


def whitespace_tokens(text: str) -> int:
    return len(text.split())


def count_tokens(raw: str, tagged: bool = True) -> TokenCounts:
    """Whitespace-token counts per segment of a completion.

    Untagged output (standard prompting) counts entirely as answer tokens.
    The per-segment counts always add up to the token count of ``raw`` with
    its tags replaced by spaces.
    """
    if not tagged:
        return TokenCounts(answer=whitespace_tokens(raw))
    counts = dict.fromkeys(("reasoning", "timeline", "reflection", "answer", "other"), 0)
    for bucket, _idx, text, _rounds in _walk(raw or ""):
        if bucket != "answer-open":
            counts[bucket] += whitespace_tokens(text)
    return TokenCounts(**counts)
