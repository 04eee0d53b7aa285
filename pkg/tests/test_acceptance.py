"""Acceptance criteria, one test each.

Every test records a single pass/fail line (printed in the pytest terminal
summary and to stdout) and then asserts, so a failing criterion is both
reported and counted as a failure.
"""

from __future__ import annotations

import json
import random
import re
import time

import httpx

from conftest import ACCEPTANCE_LINES, CONTEXT_FILES, FIXTURES, context, questions, transcript
from oracles import oracle_answer
from tiser.backends import (
    BackendConfig,
    GenerationRequest,
    HttpBackend,
    ReplayBackend,
    ScriptedBackend,
    SyntheticBackend,
    prompt_sha256,
    record,
)
from tiser.contexts import parse_context, render_context
from tiser.dataset import SourceSample, build, match_answers
from tiser.evaluation import DatasetScore, EvalReport, exact_match, token_f1, token_overhead
from tiser.pipeline import run, run_batch
from tiser.solver import solve
from tiser.synthetic import MAX_ENTITIES, MAX_FACTS, generate_instances
from tiser.traces import PromptSpec, parse_trace, render_prompt, validate_trace


def report(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append((n, ok, detail))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _structure(parsed):
    return parsed.format, [(f.statement, f.kind, f.start, f.end, f.subject, f.relation, f.obj) for f in parsed.facts]


def test_criterion_1_parser_fidelity():
    texts = {name: context(name) for name in CONTEXT_FILES}
    t0 = time.perf_counter()
    bad = []
    for name, text in texts.items():
        parsed = parse_context(text)
        again = parse_context(render_context(parsed)) if not parsed.residual else None
        if parsed.residual or again is None or _structure(again) != _structure(parsed):
            bad.append(name)
    elapsed = time.perf_counter() - t0
    report(1, not bad and elapsed < 1.0,
           f"{len(texts) - len(bad)}/{len(texts)} contexts parse with zero residual and round-trip; {elapsed:.3f}s (limit 1s)")


def test_criterion_2_solver_gold_reproduction():
    hits = []
    for name in ("amy_johnson", "taylor_graham", "conor_sammon"):
        q = questions()[name]
        ans = solve(q["question"], context(name))
        hits.append(ans.answer == q["answer"])
    report(2, all(hits), f"{sum(hits)}/3 gold answers reproduced exactly")


def test_criterion_3_oracle_equivalence():
    t0 = time.perf_counter()
    insts = generate_instances(1000, seed=2024)
    sizes_ok = all(i.n_entities <= MAX_ENTITIES and i.n_facts <= MAX_FACTS for i in insts)
    agree = sum(solve(i.question, i.context).answer == oracle_answer(i.kind, i.question, i.context) for i in insts)
    elapsed = time.perf_counter() - t0
    report(3, agree == 1000 and sizes_ok and elapsed < 30.0,
           f"solver EM vs brute force {agree / 10:.1f}% over 1000 instances; sizes within bounds={sizes_ok}; "
           f"{elapsed:.2f}s (limit 30s)")


def test_criterion_4_metric_correctness():
    f1 = token_f1("Seattle Sounders", "Seattle Sounders FC")
    rng = random.Random(4)
    vocab = ["a", "the", "An", "x", "y", "z.", "Town", "town", "sounders", ","]
    violations = 0
    for _ in range(10_000):
        p = " ".join(rng.choices(vocab, k=rng.randint(0, 5)))
        g = " ".join(rng.choices(vocab, k=rng.randint(0, 5)))
        if exact_match(p, g) and token_f1(p, g) != 1.0:
            violations += 1
    vals = [84.5, 85.5, 91.5, 97.9, 96.1]
    macro = EvalReport({str(i): DatasetScore(v, v, 1) for i, v in enumerate(vals)}).macro_em
    ok = abs(f1 - 0.8) <= 1e-9 and violations == 0 and abs(macro - 91.1) <= 0.05
    report(4, ok, f"F1={f1:.12f} (want 0.8); em=>f1 violations {violations}/10000; macro={macro:.2f} (want 91.1)")


def _sources(n, seed):
    return [SourceSample(i.id, i.question, i.answer, i.context, i.dataset) for i in generate_instances(n, seed=seed)]


def test_criterion_5_consistency_filter():
    t0 = time.perf_counter()
    sources = _sources(2000, seed=5)
    kept, stats = build(sources, SyntheticBackend(corruption_rate=0.2, seed=5), parallelism=4)
    frac = len(kept) / len(sources)
    sound = all(match_answers(k.generated_answer, k.source.gold_answer) for k in kept)
    clean, _ = build(sources[:500], SyntheticBackend(corruption_rate=0.0, seed=5), parallelism=4)
    elapsed = time.perf_counter() - t0
    ok = 0.773 <= frac <= 0.827 and sound and len(clean) == 500 and elapsed < 60.0
    report(5, ok, f"retained {frac:.4f} at rate 0.2 (band [0.773, 0.827]); clean run kept {len(clean)}/500; "
                  f"re-verified={sound}; {elapsed:.2f}s (limit 60s)")


def test_criterion_6_trace_protocol():
    names = ["amy_johnson_deepseek", "amy_johnson_gpt4o", "taylor_graham", "conor_sammon", "chris_evans_multi_round"]
    well = [validate_trace(parse_trace(transcript(n))).well_formed for n in names]
    multi = parse_trace(transcript("chris_evans_multi_round"))
    v = validate_trace(multi)
    ok = all(well) and v.round_count == 2 and multi.answer == "Chris Evans was born in Bristol, Connecticut"
    report(6, ok, f"{sum(well)}/5 transcripts well formed; multi-round rounds={v.round_count}, answer={multi.answer!r}")


def _trace(timeline):
    return f"<reasoning>r<timeline>{timeline}</timeline><reflection>Checked.</reflection></reasoning><answer>A</answer>"


def test_criterion_7_loop_behaviour():
    bad = _trace("1. (B) starts at 1990\n2. (A) starts at 1950")
    good = _trace("1. (A) starts at 1950\n2. (B) starts at 1990")
    q, c = "Which event is the first one?", "(A) starts at 1950. (B) starts at 1990."
    two = run(q, c, ScriptedBackend([bad, good, good]))
    never = run(q, c, ScriptedBackend([bad] * 10))
    ok = (len(two.iterations), two.stop_reason) == (2, "converged") and \
        (len(never.iterations), never.stop_reason) == (3, "max_iterations")
    report(7, ok, f"scripted fix: {len(two.iterations)} iterations/{two.stop_reason}; "
                  f"never consistent: {len(never.iterations)} iterations/{never.stop_reason}")


def test_criterion_8_token_overhead():
    samples = [i.to_dict() for i in generate_instances(200, seed=8)]
    results = run_batch(samples, SyntheticBackend(corruption_rate=0.2, seed=8), parallelism=4)
    rep = token_overhead(results)
    rows = [name for name, _ in rep.rows()]
    # Independent recount: every raw completion with its tags blanked out.
    tag = re.compile(r"<\s*/?\s*(reasoning|timeline|reflection|answer)\s*>", re.I)
    exact = all(
        t.reasoning + t.timeline + t.reflection + t.answer == t.total
        == sum(len(tag.sub(" ", it.raw).split()) for it in r.iterations)
        for r, t in ((r, r.tokens) for r in results)
    )
    ok = rows == ["Overall", "Reasoning", "Timeline", "Reflection"] and exact
    report(8, ok, f"rows={rows}; per-sample identity exact={exact}; overall avg {rep.overall_avg:.2f} whitespace tokens "
                  "(published values not expected: tokenizer differs)")


def test_criterion_9_desk_scale_substitute(tmp_path):
    """Model accuracies are not reproducible here; exercise the http path via recorded fixtures."""
    fixture_rows = [json.loads(x) for x in (FIXTURES / "replay_http.jsonl").read_text().splitlines() if x.strip()]
    by_hash = {r["prompt_sha256"]: r["response"] for r in fixture_rows}

    def handler(request):
        prompt = json.loads(request.content)["messages"][0]["content"]
        return httpx.Response(200, json={"choices": [{"message": {"content": by_hash[prompt_sha256(prompt)]}}]})

    cfg = BackendConfig("http", endpoint="http://recorded.invalid/v1/chat/completions", model_name="recorded-chat-model")
    rec_path = tmp_path / "rec.jsonl"
    live = record(HttpBackend(cfg, transport=httpx.MockTransport(handler), sleep=lambda s: None), rec_path)
    prompts = []
    for name in ("taylor_graham", "conor_sammon", "amy_johnson"):
        prompts.append(render_prompt(PromptSpec("tiser", questions()[name]["question"], context(name))))
    first = [live.generate(GenerationRequest(p)).text for p in prompts]
    replayed = [ReplayBackend(rec_path).generate(GenerationRequest(p)).text for p in prompts]
    shipped = [ReplayBackend(FIXTURES / "replay_http.jsonl").generate(GenerationRequest(p)).text for p in prompts]
    ok = first == replayed == shipped
    report(9, ok, "substitute only: LLM accuracy and generator correctness tables are not reproducible at desk "
                  f"scale; http record/replay smoke path byte-identical for {len(prompts)} prompts={ok}")
