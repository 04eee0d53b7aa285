"""The generation loop: prompt for a tagged trace and re-prompt until its checks pass."""

from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from .backends import Backend, BackendConfig, GenerationRequest, make_backend, prompt_sha256
from .errors import BackendError, MissingAnswerTag, TiserError
from .temporal import ConsistencyReport, Timeline, Violation, check_consistency
from .traces import (
    STAGES,
    PromptSpec,
    Round,
    TokenCounts,
    Trace,
    count_tokens,
    extract_timeline,
    fill_template,
    format_target,
    load_template,
    parse_trace,
    render_prompt,
)

SCHEMA_VERSION = 1
STOP_POLICIES = ("timeline_consistent", "reflection_clean", "both")
STOP_REASONS = ("converged", "max_iterations", "generation_failed")
DEFAULT_FLAG_PHRASES = ("incorrect", "flawed", "error", "contradict")
_NEGATORS = {"no", "not", "never", "without", "nor", "free", "none", "neither"}


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "tiser"
    max_iterations: int = 3
    stop_policy: str = "both"
    single_call: bool = True
    flag_phrases: tuple[str, ...] = DEFAULT_FLAG_PHRASES
    ablation_stages: frozenset = frozenset(STAGES)
    max_tokens: int = 1024
    temperature: float = 0.0
    template_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.stop_policy not in STOP_POLICIES:
            raise ValueError(f"unknown stop_policy {self.stop_policy!r}")
        object.__setattr__(self, "flag_phrases", tuple(self.flag_phrases))
        object.__setattr__(self, "ablation_stages", frozenset(self.ablation_stages))
        PromptSpec(self.mode, "q", "c", "g" if self.mode == "tiser_with_gold" else None, self.ablation_stages)

    @property
    def stages(self) -> frozenset:
        return self.ablation_stages if self.mode == "ablation" else frozenset(STAGES)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "max_iterations": self.max_iterations,
            "stop_policy": self.stop_policy,
            "single_call": self.single_call,
            "flag_phrases": list(self.flag_phrases),
            "ablation_stages": sorted(self.ablation_stages),
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }


@dataclass(frozen=True)
class CallRecord:
    stage: str
    prompt_sha256: str
    backend_id: str
    tokens: TokenCounts
    latency_ms: int = 0
    error: Optional[str] = None

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "stage": self.stage,
            "prompt_sha256": self.prompt_sha256,
            "backend_id": self.backend_id,
            "tokens": self.tokens.to_dict(),
        }
        if self.error:
            out["error"] = self.error
        if include_timing:
            out["latency_ms"] = self.latency_ms
        return out


@dataclass(frozen=True)
class IterationRecord:
    index: int
    trace_round: Round
    answer: str
    timeline: Optional[Timeline]
    consistency: ConsistencyReport
    reflection_flag: str
    calls: tuple[CallRecord, ...]
    raw: str = ""

    @property
    def tokens(self) -> TokenCounts:
        total = TokenCounts()
        for c in self.calls:
            total = total + c.tokens
        return total

    def to_dict(self, include_timing: bool = False) -> dict:
        return {
            "index": self.index,
            "round": self.trace_round.to_dict(),
            "answer": self.answer,
            "timeline": self.timeline.to_dict() if self.timeline else None,
            "consistency": self.consistency.to_dict(),
            "reflection_flag": self.reflection_flag,
            "calls": [c.to_dict(include_timing) for c in self.calls],
            "raw": self.raw,
        }


@dataclass(frozen=True)
class PipelineResult:
    question: str
    context: str
    iterations: tuple[IterationRecord, ...]
    final_answer: str
    stop_reason: str
    mode: str = "tiser"
    id: Optional[str] = None
    gold: Optional[str] = None
    error: Optional[str] = None
    elapsed_ms: int = 0
    dataset: Optional[str] = None

    @property
    def tokens(self) -> TokenCounts:
        total = TokenCounts()
        for it in self.iterations:
            total = total + it.tokens
        return total

    @property
    def final_round(self) -> Optional[Round]:
        for it in reversed(self.iterations):
            if it.trace_round.tags:
                return it.trace_round
        return None

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "dataset": self.dataset,
            "mode": self.mode,
            "question": self.question,
            "context": self.context,
            "gold": self.gold,
            "final_answer": self.final_answer,
            "stop_reason": self.stop_reason,
            "error": self.error,
            "tokens": self.tokens.to_dict(),
            "iterations": [it.to_dict(include_timing) for it in self.iterations],
        }
        if include_timing:
            out["elapsed_ms"] = self.elapsed_ms
        return out


# ---------------------------------------------------------------------------
# Stop policy
# ---------------------------------------------------------------------------


def reflection_flag(text: str, phrases: Sequence[str] = DEFAULT_FLAG_PHRASES) -> str:
    """``"flagged"`` if any flag phrase appears un-negated, else ``"clean"``.

    Phrases match at word starts (``error`` also hits ``errors``); a hit
    preceded within three words by a negator such as ``no`` or ``not`` is
    ignored, so "There are no contradictions" stays clean.
    """
    for phrase in phrases:
        for m in re.finditer(r"\b" + re.escape(phrase) + r"\w*", text or "", re.IGNORECASE):
            before = re.findall(r"[\w']+", text[: m.start()])[-3:]
            if any(w.lower() in _NEGATORS or w.lower().endswith("n't") for w in before):
                continue
            return "flagged"
    return "clean"


def check_stop(
    round: Optional[Round],
    timeline: Optional[Timeline],
    consistency: ConsistencyReport,
    reflection_text: str,
    cfg: PipelineConfig,
) -> bool:
    timeline_ok = consistency.consistent
    reflection_ok = reflection_flag(reflection_text, cfg.flag_phrases) == "clean"
    if cfg.stop_policy == "timeline_consistent":
        return timeline_ok
    if cfg.stop_policy == "reflection_clean":
        return reflection_ok
    return timeline_ok and reflection_ok


# ---------------------------------------------------------------------------
# Single run
# ---------------------------------------------------------------------------


def _call(backend: Backend, prompt: str, stage: str, cfg: PipelineConfig, tagged: bool):
    req = GenerationRequest(prompt, max_tokens=cfg.max_tokens, temperature=cfg.temperature)
    res = backend.generate(req)
    record = CallRecord(stage, prompt_sha256(prompt), res.backend_id, count_tokens(res.text, tagged), res.latency_ms)
    return res.text, record


def _timeline_check(trace_round: Optional[Round], answer_only: bool, cfg: PipelineConfig):
    if "timeline" not in cfg.stages:
        return None, ConsistencyReport()
    if trace_round is None or answer_only:
        return None, ConsistencyReport((Violation("unparseable", "trace has no timeline"),))
    try:
        timeline = extract_timeline_from_round(trace_round)
    except TiserError as exc:
        return None, ConsistencyReport((Violation("unparseable", str(exc)),))
    return timeline, check_consistency(timeline)


def extract_timeline_from_round(r: Round) -> Timeline:
    return extract_timeline(Trace((r,), "-"))


def _segment(raw: str, tag: str) -> str:
    hits = re.findall(
        rf"<{tag}>(.*?)(?=</{tag}>|<(?:reasoning|timeline|reflection|answer)>|\Z)", raw, re.DOTALL | re.IGNORECASE
    )
    if hits:
        return hits[-1].strip()
    return "" if re.search(r"<(?:reasoning|timeline|reflection|answer)>", raw, re.IGNORECASE) else raw.strip()


def _multi_call_round(backend, spec: PromptSpec, previous: Optional[str], cfg: PipelineConfig):
    tdir = Path(cfg.template_dir) if cfg.template_dir else None
    base = {"question": spec.question, "context": spec.context}
    calls = []
    reasoning = timeline = reflection = ""
    tags = set()
    if "reasoning" in cfg.stages:
        prompt = fill_template(load_template("stage_reasoning", tdir), **base)
        if previous is not None:
            prompt = fill_template(load_template("revision", tdir), prompt=prompt, previous=previous)
        text, rec = _call(backend, prompt, "reasoning", cfg, True)
        calls.append(rec)
        reasoning = _segment(text, "reasoning")
        tags.add("reasoning")
    if "timeline" in cfg.stages:
        prompt = fill_template(load_template("stage_timeline", tdir), reasoning=reasoning, **base)
        text, rec = _call(backend, prompt, "timeline", cfg, True)
        calls.append(rec)
        timeline = _segment(text, "timeline")
        tags.add("timeline")
    if "reflection" in cfg.stages:
        prompt = fill_template(load_template("stage_reflection", tdir), reasoning=reasoning, timeline=timeline, **base)
        text, rec = _call(backend, prompt, "reflection", cfg, True)
        calls.append(rec)
        reflection = _segment(text, "reflection")
        tags.add("reflection")
    prompt = fill_template(load_template("stage_answer", tdir), reasoning=reasoning, timeline=timeline, **base)
    text, rec = _call(backend, prompt, "answer", cfg, True)
    calls.append(rec)
    answer = _segment(text, "answer")
    r = Round(reasoning, timeline, reflection, frozenset(tags))
    return r, answer, calls


def run(
    q: str,
    c: str,
    backend: Union[Backend, BackendConfig],
    cfg: Optional[PipelineConfig] = None,
    gold: Optional[str] = None,
    sample_id: Optional[str] = None,
    dataset: Optional[str] = None,
) -> PipelineResult:
    """Run the reasoning loop for one question."""
    cfg = cfg or PipelineConfig()
    if not q or not q.strip() or not c or not c.strip():
        raise ValueError("question and context must be non-empty")
    owned = isinstance(backend, BackendConfig)
    be = make_backend(backend) if owned else backend
    t0 = time.perf_counter()
    spec = PromptSpec(cfg.mode, q, c, gold if cfg.mode == "tiser_with_gold" else None, cfg.ablation_stages)
    tdir = Path(cfg.template_dir) if cfg.template_dir else None
    base_prompt = render_prompt(spec, tdir)
    iterations: list[IterationRecord] = []
    stop_reason = "max_iterations"
    final_answer = ""
    error = None

    def finish():
        return PipelineResult(
            q, c, tuple(iterations), final_answer, stop_reason, cfg.mode, sample_id, gold, error,
            int(round((time.perf_counter() - t0) * 1000)), dataset,
        )

    try:
        if cfg.mode == "standard":
            try:
                raw, rec = _call(be, base_prompt, "answer", cfg, tagged=False)
            except BackendError as exc:
                stop_reason, error = "generation_failed", f"{exc.code}: {exc}"
                return finish()
            answer = _segment(raw, "answer") if "<answer>" in raw.lower() else raw.strip()
            iterations.append(IterationRecord(1, Round(), answer, None, ConsistencyReport(), "clean", (rec,), raw))
            final_answer, stop_reason = answer, "converged"
            return finish()

        previous: Optional[str] = None
        for i in range(1, cfg.max_iterations + 1):
            calls: list[CallRecord] = []
            try:
                if cfg.single_call:
                    prompt = base_prompt
                    if previous is not None:
                        prompt = fill_template(load_template("revision", tdir), prompt=base_prompt, previous=previous)
                    raw, rec = _call(be, prompt, "full", cfg, True)
                    calls.append(rec)
                    trace = parse_trace(raw)
                    trace_round = trace.final_round or Round()
                    answer = trace.answer
                else:
                    trace_round, answer, new_calls = _multi_call_round(be, spec, previous, cfg)
                    calls.extend(new_calls)
                    raw = format_target([trace_round], answer)
                    if not answer:
                        raise MissingAnswerTag("answer stage returned no text")
            except (BackendError, MissingAnswerTag) as exc:
                failed = CallRecord("full", "", getattr(be, "backend_id", "?"), TokenCounts(), 0, exc.code)
                iterations.append(
                    IterationRecord(i, Round(), "", None, ConsistencyReport(), "clean", tuple(calls) or (failed,))
                )
                stop_reason, error, final_answer = "generation_failed", f"{exc.code}: {exc}", ""
                return finish()

            answer_only = not trace_round.tags
            timeline, consistency = _timeline_check(trace_round, answer_only, cfg)
            reflection_text = trace_round.reflection if "reflection" in cfg.stages else ""
            flag = reflection_flag(reflection_text, cfg.flag_phrases)
            iterations.append(
                IterationRecord(i, trace_round, answer, timeline, consistency, flag, tuple(calls), raw)
            )
            final_answer = answer
            if check_stop(trace_round, timeline, consistency, reflection_text, cfg):
                stop_reason = "converged"
                return finish()
            previous = raw
        stop_reason = "max_iterations"
        return finish()
    finally:
        if owned:
            be.close()


# ---------------------------------------------------------------------------
# Batches and persistence
# ---------------------------------------------------------------------------


def _field(sample, name: str, default=None):
    if isinstance(sample, dict):
        return sample.get(name, default)
    return getattr(sample, name, default)


def run_batch(
    samples: Sequence,
    backend: Union[Backend, BackendConfig],
    cfg: Optional[PipelineConfig] = None,
    parallelism: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> list[PipelineResult]:
    """Run every sample; results keep input order and failures stay per-sample.

    Samples are mappings or objects with ``question`` and ``context`` and
    optionally ``id``, ``gold_answer`` (or ``answer``) and ``dataset``.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    cfg = cfg or PipelineConfig()
    owned = isinstance(backend, BackendConfig)
    be = make_backend(backend) if owned else backend
    total = len(samples)
    done = 0

    def one(sample) -> PipelineResult:
        q = _field(sample, "question", "") or ""
        c = _field(sample, "context", "") or ""
        gold = _field(sample, "gold_answer") or _field(sample, "answer")
        sid = _field(sample, "id")
        ds = _field(sample, "dataset")
        try:
            return run(q, c, be, cfg, gold=gold, sample_id=sid, dataset=ds)
        except Exception as exc:  # isolate: one bad sample never sinks the batch
            code = getattr(exc, "code", type(exc).__name__)
            return PipelineResult(q, c, (), "", "generation_failed", cfg.mode, sid, gold, f"{code}: {exc}", 0, ds)

    results: list[Optional[PipelineResult]] = [None] * total
    try:
        if parallelism == 1:
            for i, s in enumerate(samples):
                results[i] = one(s)
                done += 1
                if progress:
                    progress(done, total)
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                futures = {pool.submit(one, s): i for i, s in enumerate(samples)}
                for fut in as_completed(futures):
                    results[futures[fut]] = fut.result()
                    done += 1
                    if progress:
                        progress(done, total)
    finally:
        if owned:
            be.close()
    return results  # type: ignore[return-value]


def result_line(result: PipelineResult, include_timing: bool = False) -> str:
    return json.dumps(result.to_dict(include_timing), ensure_ascii=False, sort_keys=True)


def load_results(path: Union[str, Path]) -> list[dict]:
    """Read a results JSONL file written by :func:`result_line`."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            version = row.get("schema_version")
            if version != SCHEMA_VERSION:
                raise ValueError(f"{path}:{lineno}: unsupported schema_version {version!r}")
            rows.append(row)
    return rows


def iter_calls(result: PipelineResult) -> Iterable[CallRecord]:
    for it in result.iterations:
        yield from it.calls


__all__ = [
    "CallRecord",
    "IterationRecord",
    "PipelineConfig",
    "PipelineResult",
    "check_stop",
    "load_results",
    "reflection_flag",
    "result_line",
    "run",
    "run_batch",
]
