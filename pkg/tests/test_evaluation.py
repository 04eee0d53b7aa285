from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiser.backends import ScriptedBackend, SyntheticBackend
from tiser.evaluation import (
    DatasetScore,
    EvalReport,
    ScoredPrediction,
    aggregate,
    exact_match,
    normalize_answer,
    score,
    token_f1,
    token_overhead,
)
from tiser.pipeline import PipelineConfig, run, run_batch
from tiser.synthetic import generate_instances


def test_normalize_examples():
    assert normalize_answer("The Seattle Sounders.") == ["seattle", "sounders"]
    assert normalize_answer("") == []
    assert normalize_answer(None) == []
    assert normalize_answer("Ipswich Town") == ["ipswich", "town"]


def test_exact_match_examples():
    assert exact_match("Seattle Sounders", "seattle sounders") == 1
    assert exact_match("Derby County", "Ipswich Town") == 0
    assert exact_match("a", ["b", "A."]) == 1
    assert exact_match("Seattle Sounders", "seattle sounders", policy="raw") == 0


def test_token_f1_examples():
    assert token_f1("Seattle Sounders", "Seattle Sounders FC") == pytest.approx(0.8, abs=1e-9)
    assert token_f1("Ipswich Town", "Ipswich Town") == 1.0
    assert token_f1("Kilmarnock", "Derby County") == 0.0
    assert token_f1("", "") == 1.0
    assert token_f1("", "x") == 0.0
    assert token_f1("x", ["y", "x z"]) == pytest.approx(2 / 3)


def _f1_oracle(p: list[str], g: list[str]) -> Fraction:
    # Exact rational arithmetic with overlap counted by repeated removal.
    if not p and not g:
        return Fraction(1)
    if not p or not g:
        return Fraction(0)
    pool, o = list(g), 0
    for tok in p:
        if tok in pool:
            pool.remove(tok)
            o += 1
    if o == 0:
        return Fraction(0)
    prec, rec = Fraction(o, len(p)), Fraction(o, len(g))
    return 2 * prec * rec / (prec + rec)


words = st.lists(st.sampled_from(["a", "the", "x", "y", "z", "sounders", "Town", "x.", "Z"]), max_size=6).map(" ".join)


@settings(max_examples=500, deadline=None)
@given(words, words)
def test_f1_matches_rational_oracle_and_properties(p, g):
    f = token_f1(p, g)
    assert math.isclose(f, float(_f1_oracle(normalize_answer(p), normalize_answer(g))), abs_tol=1e-12)
    assert 0.0 <= f <= 1.0
    assert f == token_f1(g, p)
    assert (f == 1.0) == (sorted(normalize_answer(p)) == sorted(normalize_answer(g)))
    if exact_match(p, g):
        assert f == 1.0


def test_scored_prediction_invariant():
    with pytest.raises(ValueError):
        ScoredPrediction("1", "x", ("x",), 1, 0.5)
    s = score("1", "Seattle Sounders", "Seattle Sounders FC", "tempreason_l2")
    assert (s.em, s.f1) == (0, pytest.approx(0.8))


def test_aggregate_examples():
    scored = [score("1", "a", "a", "d1"), score("2", "a", "b", "d2")]
    rep = aggregate(scored)
    assert rep.macro_em == 50.0
    single = aggregate([score("1", "a", "a", "only"), score("2", "b", "c", "only")])
    assert single.macro_em == single.per_dataset["only"].em_pct == 50.0
    relabeled = aggregate(scored, labels=["z", "z"])
    assert list(relabeled.per_dataset) == ["z"]
    with pytest.raises(ValueError):
        aggregate(scored, labels=["z"])


def test_macro_of_reported_row_and_table():
    vals = [84.5, 85.5, 91.5, 97.9, 96.1]
    rep = EvalReport({f"d{i}": DatasetScore(v, v, 1) for i, v in enumerate(vals)})
    assert abs(rep.macro_em - 91.1) <= 0.05
    table = rep.format_table()
    assert "Macro Avg." in table.splitlines()[0]
    assert "91.1" in table


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=30))
def test_macro_is_mean_of_datasets(rows):
    scored = [ScoredPrediction(str(i), "", ("",), em, 1.0 if em else f1, ds) for i, (ds, em, f1) in enumerate(rows)]
    rep = aggregate(scored)
    ems = [d.em_pct for d in rep.per_dataset.values()]
    assert abs(rep.macro_em - sum(ems) / len(ems)) <= 1e-12


def test_token_overhead_standard_mode():
    results = [run("q?", "c", ScriptedBackend(["one two three four"]), PipelineConfig(mode="standard")) for _ in range(3)]
    rep = token_overhead(results)
    assert rep.overall_avg == 4.0 and rep.answer_avg == 4.0
    assert rep.reasoning_avg is None and rep.timeline_avg is None and rep.reflection_avg is None


def test_token_overhead_layout_and_identity():
    samples = [i.to_dict() for i in generate_instances(30, seed=4)]
    results = run_batch(samples, SyntheticBackend())
    rep = token_overhead(results)
    assert [name for name, _ in rep.rows()] == ["Overall", "Reasoning", "Timeline", "Reflection"]
    stage_sum = rep.reasoning_avg + rep.timeline_avg + rep.reflection_avg + rep.answer_avg + rep.other_avg
    assert stage_sum == pytest.approx(rep.overall_avg, abs=1e-9)
    for r in results:
        t = r.tokens
        assert t.reasoning + t.timeline + t.reflection + t.answer + t.other == t.total
    assert token_overhead([r.to_dict() for r in results]) == rep
    assert "Reflection" in rep.format_table()


def test_token_overhead_empty():
    assert token_overhead([]).n == 0
