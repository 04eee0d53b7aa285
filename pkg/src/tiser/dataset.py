"""Consistency-filtered training data: generate traces, keep the ones that match gold."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .backends import Backend, BackendConfig
from .errors import MissingAnswerTag, SchemaError
from .evaluation import exact_match, normalize_answer
from .pipeline import PipelineConfig, PipelineResult, run_batch
from .traces import PromptSpec, Round, format_target, parse_trace, render_prompt

DATASETS = ("tgqa", "tempreason_l2", "tempreason_l3", "timeqa_easy", "timeqa_hard", "other")
MATCH_POLICIES = ("exact_normalized", "em")

# Upstream field names mapped onto the canonical schema, per benchmark family.
FIELD_ALIASES = {
    "id": ("id", "qid", "question_id", "idx", "example_id"),
    "question": ("question", "query", "q", "prompt_question"),
    "answer": ("answer", "gold_answer", "gold", "answers", "targets", "text_answers", "label"),
    "context": ("context", "story", "fact_context", "temporal_context", "passage", "paragraph", "facts"),
    "dataset": ("dataset", "source", "subset", "level"),
}

_DATASET_ALIASES = {
    "tgqa": "tgqa", "tg-qa": "tgqa", "tg_qa": "tgqa",
    "tempreason_l2": "tempreason_l2", "tempreason-l2": "tempreason_l2", "tempreason l2": "tempreason_l2",
    "l2": "tempreason_l2",
    "tempreason_l3": "tempreason_l3", "tempreason-l3": "tempreason_l3", "tempreason l3": "tempreason_l3",
    "l3": "tempreason_l3",
    "timeqa_easy": "timeqa_easy", "timeqa-easy": "timeqa_easy", "timeqa easy": "timeqa_easy", "easy": "timeqa_easy",
    "timeqa_hard": "timeqa_hard", "timeqa-hard": "timeqa_hard", "timeqa hard": "timeqa_hard", "hard": "timeqa_hard",
    "other": "other",
}


@dataclass(frozen=True)
class SourceSample:
    id: str
    question: str
    gold_answer: str
    context: str
    dataset: str = "other"

    def __post_init__(self) -> None:
        for name in ("id", "question", "gold_answer", "context"):
            if not str(getattr(self, name)).strip():
                raise ValueError(f"{name} must be non-empty")
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "answer": self.gold_answer,
            "context": self.context,
            "dataset": self.dataset,
        }


@dataclass(frozen=True)
class AugmentedSample:
    source: SourceSample
    rounds: tuple[Round, ...]
    generated_answer: str

    @property
    def reasoning(self) -> str:
        return self.rounds[-1].reasoning if self.rounds else ""

    @property
    def timeline(self) -> str:
        return self.rounds[-1].timeline if self.rounds else ""

    @property
    def reflection(self) -> str:
        return self.rounds[-1].reflection if self.rounds else ""

    def to_dict(self) -> dict:
        out = self.source.to_dict()
        out.update(
            reasoning=self.reasoning,
            timeline=self.timeline,
            reflection=self.reflection,
            generated_answer=self.generated_answer,
            rounds=[r.to_dict() for r in self.rounds],
        )
        return out


@dataclass
class DatasetCounts:
    total: int = 0
    generated: int = 0
    correct: int = 0
    failed: int = 0

    @property
    def retained(self) -> int:
        return self.correct

    @property
    def discarded(self) -> int:
        return self.generated - self.correct

    @property
    def correctness_pct(self) -> Optional[float]:
        return 100.0 * self.correct / self.generated if self.generated else None

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "generated": self.generated,
            "correct": self.correct,
            "retained": self.retained,
            "discarded": self.discarded,
            "failed": self.failed,
            "correctness_pct": self.correctness_pct,
        }


@dataclass(frozen=True)
class BuildStats:
    """Per-dataset tallies; correctness is over generated answers, failures kept apart."""

    per_dataset: dict = field(default_factory=dict)
    match_policy: str = "exact_normalized"

    @property
    def overall(self) -> DatasetCounts:
        agg = DatasetCounts()
        for c in self.per_dataset.values():
            agg.total += c.total
            agg.generated += c.generated
            agg.correct += c.correct
            agg.failed += c.failed
        return agg

    def to_dict(self) -> dict:
        return {
            "match_policy": self.match_policy,
            "datasets": {k: v.to_dict() for k, v in sorted(self.per_dataset.items())},
            "overall": self.overall.to_dict(),
        }

    def format_table(self) -> str:
        """Datasets as columns; correctness, pre-filter and post-filter counts as rows."""
        names = [d for d in DATASETS if d in self.per_dataset] + sorted(set(self.per_dataset) - set(DATASETS))
        cols = names + ["Overall"]
        counts = [self.per_dataset[n] for n in names] + [self.overall]

        def pct(c: DatasetCounts) -> str:
            return "-" if c.correctness_pct is None else f"{c.correctness_pct:.1f}"

        rows = [
            ("Correctness (%)", [pct(c) for c in counts]),
            ("Instances", [str(c.total) for c in counts]),
            ("Retained", [str(c.retained) for c in counts]),
            ("Discarded", [str(c.discarded) for c in counts]),
            ("Failed", [str(c.failed) for c in counts]),
        ]
        label_w = max(len(r[0]) for r in rows)
        widths = [max(len(c), *(len(r[1][i]) for r in rows)) for i, c in enumerate(cols)]
        lines = [" " * label_w + " | " + " | ".join(c.rjust(w) for c, w in zip(cols, widths))]
        lines.append("-" * len(lines[0]))
        for label, vals in rows:
            lines.append(label.ljust(label_w) + " | " + " | ".join(v.rjust(w) for v, w in zip(vals, widths)))
        lines.append(f"match policy: {self.match_policy}")
        return "\n".join(lines)


def match_answers(generated: str, gold: str, policy: str = "exact_normalized") -> bool:
    if policy == "exact_normalized":
        return normalize_answer(generated) == normalize_answer(gold)
    if policy == "em":
        return exact_match(generated, gold) == 1
    raise ValueError(f"unknown match policy {policy!r}")


def _final_rounds(res: PipelineResult) -> tuple[Round, ...]:
    """All rounds of the accepted completion, in order."""
    last = res.iterations[-1]
    try:
        return parse_trace(last.raw).rounds
    except MissingAnswerTag:
        return (last.trace_round,) if last.trace_round.tags else ()


def build_detailed(
    sources: Sequence[SourceSample],
    backend: Union[Backend, BackendConfig],
    pipeline_cfg: Optional[PipelineConfig] = None,
    match: str = "exact_normalized",
    parallelism: int = 1,
    progress=None,
) -> tuple[list[AugmentedSample], BuildStats, list[PipelineResult]]:
    """Generate gold-conditioned traces and keep those whose answer matches gold."""
    if not sources:
        raise ValueError("sources must be non-empty")
    if match not in MATCH_POLICIES:
        raise ValueError(f"unknown match policy {match!r}")
    base = pipeline_cfg or PipelineConfig()
    cfg = PipelineConfig(
        mode="tiser_with_gold",
        max_iterations=base.max_iterations,
        stop_policy=base.stop_policy,
        single_call=base.single_call,
        flag_phrases=base.flag_phrases,
        max_tokens=base.max_tokens,
        temperature=base.temperature,
        template_dir=base.template_dir,
    )
    results = run_batch(sources, backend, cfg, parallelism, progress)
    kept: list[AugmentedSample] = []
    per: dict[str, DatasetCounts] = {}
    for src, res in zip(sources, results):
        counts = per.setdefault(src.dataset, DatasetCounts())
        counts.total += 1
        if res.stop_reason == "generation_failed":
            counts.failed += 1
            continue
        counts.generated += 1
        if match_answers(res.final_answer, src.gold_answer, match):
            counts.correct += 1
            kept.append(AugmentedSample(src, _final_rounds(res), res.final_answer))
    return kept, BuildStats(per, match), results


def build(
    sources: Sequence[SourceSample],
    backend: Union[Backend, BackendConfig],
    pipeline_cfg: Optional[PipelineConfig] = None,
    match: str = "exact_normalized",
    parallelism: int = 1,
) -> tuple[list[AugmentedSample], BuildStats]:
    kept, stats, _results = build_detailed(sources, backend, pipeline_cfg, match, parallelism)
    return kept, stats


def format_sft(s: AugmentedSample, template_dir: Optional[Path] = None) -> dict:
    """Prompt/target pair; the target nests timeline and reflection inside reasoning."""
    prompt = render_prompt(PromptSpec("tiser", s.source.question, s.source.context), template_dir)
    return {"id": s.source.id, "prompt": prompt, "target": format_target(s.rounds or (Round(),), s.generated_answer)}


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def normalize_dataset_label(label: Optional[str], default: str = "other") -> str:
    if label is None or not str(label).strip():
        return default
    key = " ".join(str(label).strip().lower().replace("_", " ").split())
    for candidate in (key, key.replace(" ", "_"), key.replace(" ", "-")):
        if candidate in _DATASET_ALIASES:
            return _DATASET_ALIASES[candidate]
    return "other"


def _pick(row: dict, name: str):
    for alias in FIELD_ALIASES[name]:
        if alias in row and row[alias] not in (None, "", []):
            return row[alias]
    return None


def _as_text(value, name: str, lineno: int) -> str:
    if isinstance(value, list):
        if name == "context":
            return " ".join(str(v).strip().rstrip(".") + "." for v in value)
        if not value:
            raise SchemaError(f"empty {name}", lineno)
        first = value[0]
        value = first.get("text", first) if isinstance(first, dict) else first
    if isinstance(value, dict):
        value = value.get("text", value.get("value"))
    if value is None:
        raise SchemaError(f"unusable {name}", lineno)
    return str(value)


def sample_from_record(row: dict, lineno: int, dataset_kind: Optional[str] = None) -> SourceSample:
    if not isinstance(row, dict):
        raise SchemaError("record is not a JSON object", lineno)
    values = {}
    for name in ("question", "answer", "context"):
        raw = _pick(row, name)
        if raw is None:
            raise SchemaError(f"missing {name} (accepted fields: {', '.join(FIELD_ALIASES[name])})", lineno)
        text = _as_text(raw, name, lineno).strip()
        if not text:
            raise SchemaError(f"empty {name}", lineno)
        values[name] = text
    sid = _pick(row, "id")
    label = _pick(row, "dataset")
    dataset = normalize_dataset_label(label if label is not None else dataset_kind)
    return SourceSample(
        id=str(sid) if sid is not None else f"line-{lineno}",
        question=values["question"],
        gold_answer=values["answer"],
        context=values["context"],
        dataset=dataset,
    )


def load_benchmark(path: Union[str, Path], dataset_kind: Optional[str] = None) -> list[SourceSample]:
    """Read samples from JSONL; every malformed line is an error naming its line number."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", lineno) from exc
            samples.append(sample_from_record(row, lineno, dataset_kind))
    return samples


def dataset_counts(samples: Iterable[SourceSample]) -> Counter:
    return Counter(s.dataset for s in samples)


def load_questions(path: Union[str, Path]) -> list[dict]:
    """Read inference inputs; ``question`` and ``context`` are required, gold is optional."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", lineno) from exc
            if not isinstance(row, dict):
                raise SchemaError("record is not a JSON object", lineno)
            item = {}
            for name in ("question", "context"):
                raw = _pick(row, name)
                if raw is None:
                    raise SchemaError(f"missing {name}", lineno)
                item[name] = _as_text(raw, name, lineno).strip()
            answer = _pick(row, "answer")
            item["answer"] = _as_text(answer, "answer", lineno) if answer is not None else None
            sid = _pick(row, "id")
            item["id"] = str(sid) if sid is not None else f"line-{lineno}"
            item["dataset"] = normalize_dataset_label(_pick(row, "dataset"))
            rows.append(item)
    return rows
