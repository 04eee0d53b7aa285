from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import context, questions, transcript
from tiser.backends import BackendConfig, ScriptedBackend, SyntheticBackend
from tiser.dataset import (
    AugmentedSample,
    BuildStats,
    DatasetCounts,
    SourceSample,
    build,
    build_detailed,
    format_sft,
    load_benchmark,
    match_answers,
    normalize_dataset_label,
)
from tiser.errors import NetworkError, SchemaError
from tiser.synthetic import generate_instances
from tiser.traces import Round, parse_trace, validate_trace

GOLD_E = "Olivia Price was born in Harrisonburg"


def _sources(n, seed=31):
    return [
        SourceSample(i.id, i.question, i.answer, i.context, i.dataset) for i in generate_instances(n, seed=seed)
    ]


@pytest.mark.parametrize("gen,gold,policy,expected", [
    ("Seattle Sounders", "Seattle Sounders", "exact_normalized", True),
    ("seattle sounders.", "Seattle Sounders", "exact_normalized", True),
    ("Seattle Sounders FC", "Seattle Sounders", "exact_normalized", False),
    ("The Seattle Sounders", "Seattle Sounders", "em", True),
    ("Sounders", "Seattle Sounders", "em", False),
])
def test_match_examples(gen, gold, policy, expected):
    assert match_answers(gen, gold, policy) is expected


def test_match_unknown_policy():
    with pytest.raises(ValueError):
        match_answers("a", "a", "fuzzy")


def test_source_sample_invariants():
    with pytest.raises(ValueError):
        SourceSample("1", "q", " ", "c")
    with pytest.raises(ValueError):
        SourceSample("1", "q", "a", "c", dataset="mystery")


def test_build_clean_backend_keeps_everything():
    sources = _sources(100)
    kept, stats = build(sources, BackendConfig("synthetic"))
    assert len(kept) == 100
    assert stats.overall.correctness_pct == 100.0
    assert all(match_answers(k.generated_answer, k.source.gold_answer) for k in kept)


def test_build_fully_corrupted_keeps_nothing():
    kept, stats = build(_sources(50), BackendConfig("synthetic", corruption_rate=1.0))
    assert kept == [] and stats.overall.correct == 0 and stats.overall.discarded == 50


def test_build_uses_gold_conditioned_prompt():
    backend = ScriptedBackend([f"<reasoning>r<timeline>(X) starts at 1900</timeline><reflection>ok</reflection></reasoning><answer>{GOLD_E}</answer>"])
    src = SourceSample("e", questions()["amy_johnson"]["question"], GOLD_E, context("amy_johnson"), "tgqa")
    kept, _ = build([src], backend)
    assert "Perform your reasoning knowing that the answer is" in backend.prompts[0]
    assert GOLD_E in backend.prompts[0]
    assert len(kept) == 1


def test_conservation_and_failure_column():
    sources = _sources(6)
    script = []
    for i, s in enumerate(sources):
        if i == 0:
            script.append(NetworkError("down"))
        elif i == 1:
            script.append("<reasoning>r<timeline>(X) starts at 1900</timeline><reflection>ok</reflection></reasoning><answer>wrong</answer>")
        else:
            script.append(f"<reasoning>r<timeline>(X) starts at 1900</timeline><reflection>ok</reflection></reasoning><answer>{s.gold_answer}</answer>")
    kept, stats, results = build_detailed(sources, ScriptedBackend(script))
    o = stats.overall
    assert (o.total, o.failed, o.discarded, o.retained) == (6, 1, 1, 4)
    assert o.retained + o.discarded + o.failed == o.total
    assert o.correctness_pct == pytest.approx(80.0)
    for counts in stats.per_dataset.values():
        assert counts.retained + counts.discarded + counts.failed == counts.total
    assert len(results) == 6


def test_stats_table_layout():
    stats = BuildStats({"tgqa": DatasetCounts(10, 9, 8, 1), "timeqa_easy": DatasetCounts(5, 5, 5, 0)})
    table = stats.format_table()
    header = table.splitlines()[0]
    assert header.index("tgqa") < header.index("timeqa_easy") < header.index("Overall")
    assert "88.9" in table and "92.9" in table
    assert json.loads(json.dumps(stats.to_dict()))["overall"]["total"] == 15


def test_sft_round_trip_from_recorded_transcript():
    trace = parse_trace(transcript("amy_johnson_deepseek"))
    src = SourceSample("e", questions()["amy_johnson"]["question"], GOLD_E, context("amy_johnson"), "tgqa")
    row = format_sft(AugmentedSample(src, trace.rounds, trace.answer))
    assert row["prompt"].rstrip().endswith(context("amy_johnson").strip())
    again = parse_trace(row["target"])
    assert again.answer == GOLD_E
    assert validate_trace(again).well_formed


def test_sft_empty_reflection_and_chris_evans_multi_round():
    src = SourceSample("x", "q?", "A", "(A) starts at 1900", "other")
    target = format_sft(AugmentedSample(src, (Round("r", "t", ""),), "A"))["target"]
    assert "<reflection></reflection>" in target
    multi = parse_trace(transcript("chris_evans_multi_round"))
    target = format_sft(AugmentedSample(src, multi.rounds, multi.answer))["target"]
    again = parse_trace(target)
    assert len(again.rounds) == 2 and target.count("<answer>") == 1
    assert again.answer == "Chris Evans was born in Bristol, Connecticut"


def test_build_keeps_all_rounds_of_the_accepted_completion():
    raw = transcript("chris_evans_multi_round")
    src = SourceSample("m", "Which event is the first one?", "Chris Evans was born in Bristol, Connecticut",
                       "(Chris Evans was born in Bristol, Connecticut) starts at 1948", "tgqa")
    kept, _ = build([src], ScriptedBackend([raw]), match="exact_normalized")
    assert len(kept) == 1 and len(kept[0].rounds) == 2


def test_filter_soundness_reverified_from_file(tmp_path):
    kept, _ = build(_sources(200), BackendConfig("synthetic", corruption_rate=0.3, seed=2))
    out = tmp_path / "sft.jsonl"
    out.write_text("".join(json.dumps(k.to_dict()) + "\n" for k in kept))
    for line in out.read_text().splitlines():
        row = json.loads(line)
        assert match_answers(row["generated_answer"], row["answer"])


def _write(tmp_path, rows):
    p = tmp_path / "b.jsonl"
    p.write_text("\n".join(r if isinstance(r, str) else json.dumps(r) for r in rows) + "\n")
    return p


def test_load_benchmark_valid_and_mixed(tmp_path):
    rows = [
        {"id": "a", "question": "q1", "answer": "x", "context": "c", "dataset": "tgqa"},
        {"qid": "b", "question": "q2", "answers": ["y", "z"], "story": "c", "source": "TimeQA-Hard"},
        {"id": "c", "question": "q3", "answer": "w", "facts": ["f1", "f2."], "level": "L2"},
    ]
    samples = load_benchmark(_write(tmp_path, rows))
    assert [s.dataset for s in samples] == ["tgqa", "timeqa_hard", "tempreason_l2"]
    assert samples[1].gold_answer == "y"
    assert samples[2].context == "f1. f2."


def test_load_benchmark_missing_answer_names_line(tmp_path):
    rows = [{"id": "a", "question": "q", "answer": "x", "context": "c"}, {"id": "b", "question": "q", "context": "c"}]
    with pytest.raises(SchemaError) as exc:
        load_benchmark(_write(tmp_path, rows))
    assert exc.value.line == 2 and "answer" in str(exc.value)


def test_load_benchmark_bad_json_names_line(tmp_path):
    with pytest.raises(SchemaError, match="line 2"):
        load_benchmark(_write(tmp_path, [{"question": "q", "answer": "a", "context": "c"}, "{broken"]))


def test_load_benchmark_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_benchmark(tmp_path / "nope.jsonl")


def test_dataset_kind_default(tmp_path):
    p = _write(tmp_path, [{"question": "q", "answer": "a", "context": "c"}])
    assert load_benchmark(p, "tempreason_l3")[0].dataset == "tempreason_l3"
    assert normalize_dataset_label("weird") == "other"


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 1))
def test_conservation_property(seed, rate):
    sources = _sources(12, seed=seed)
    kept, stats = build(sources, SyntheticBackend(rate, seed=seed))
    for counts in stats.per_dataset.values():
        assert counts.retained + counts.discarded + counts.failed == counts.total
    assert stats.overall.total == 12 and len(kept) == stats.overall.retained
