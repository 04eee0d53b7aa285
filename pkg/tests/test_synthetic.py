from __future__ import annotations

from collections import Counter

from oracles import oracle_answer
from tiser.contexts import parse_context
from tiser.synthetic import KINDS, MAX_ENTITIES, MAX_FACTS, generate_instances


def test_same_seed_same_instances():
    assert generate_instances(50, seed=5) == generate_instances(50, seed=5)
    assert generate_instances(50, seed=5) != generate_instances(50, seed=6)


def test_prefix_stability():
    assert generate_instances(20, seed=1) == generate_instances(40, seed=1)[:20]


def test_size_bounds_and_distinctness():
    instances = generate_instances(400, seed=2)
    assert len({i.id for i in instances}) == 400
    assert len({(i.question, i.context) for i in instances}) == 400
    for inst in instances:
        assert 1 <= inst.n_entities <= MAX_ENTITIES
        parsed = parse_context(inst.context)
        assert parsed.residual == ()
        assert len(parsed.facts) == inst.n_facts <= MAX_FACTS
        years = [f.first_time.year for f in parsed.facts]
        assert all(1900 <= y <= 2000 for y in years)


def test_kinds_round_robin():
    counts = Counter(i.kind for i in generate_instances(90, seed=4))
    assert counts == Counter({k: 30 for k in KINDS})


def test_construction_answer_agrees_with_oracle():
    for inst in generate_instances(300, seed=9):
        assert oracle_answer(inst.kind, inst.question, inst.context) == inst.answer


def test_to_dict_uses_benchmark_schema():
    row = generate_instances(1, seed=0)[0].to_dict()
    assert set(row) == {"id", "question", "answer", "context", "dataset"}
