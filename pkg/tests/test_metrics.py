import pytest

from kvsearch.metrics import SearchMetrics, kv_reduction, overhead_fraction
from kvsearch.tree import SearchTree


def test_record_step_chain():
    t = SearchTree("p", 25)
    m = SearchMetrics()
    leaf = t.root
    for _ in range(3):
        leaf = t.add_child(leaf, "s", 10, 0.5)
        m.record_step(t, new_tokens=10, calls=1)
    assert m.per_step_kv_tokens == [35, 45, 55]
    assert m.cumulative_kv_tokens == 135
    assert m.generated_tokens == 30
    assert m.model_calls == 3


def test_record_step_after_prune():
    t = SearchTree("p", 0)
    a = t.add_child(t.root, "a", 40, 0.9)
    b = t.add_child(t.root, "b", 40, 0.1)
    m = SearchMetrics()
    m.record_step(t, 80, 2)
    t.prune_to({a})
    ka = t.add_child(a, "a1", 10, 0.9)
    m.record_step(t, 10, 1)
    assert m.per_step_kv_tokens[1] == m.per_step_kv_tokens[0] - 40 + 10
    del b, ka


def test_shared_prefix_records_fewer_tokens():
    # two divergent trajectories vs two sharing all but the last step
    divergent = SearchTree("p", 25)
    d1 = divergent.add_child(divergent.root, "x", 10, 0.5)
    d2 = divergent.add_child(divergent.root, "y", 10, 0.5)
    shared = SearchTree("p", 25)
    stem = shared.add_child(shared.root, "x", 10, 0.5)
    md, ms = SearchMetrics(), SearchMetrics()
    md.record_step(divergent, 20, 2)
    ms.record_step(shared, 10, 1)
    for _ in range(3):
        d1 = divergent.add_child(d1, "s", 10, 0.5)
        d2 = divergent.add_child(d2, "s", 10, 0.5)
        md.record_step(divergent, 20, 2)
        n1 = shared.add_child(stem, "s1", 10, 0.5)
        shared.add_child(stem, "s2", 10, 0.5)
        shared.prune_to({n1})
        stem = n1
        ms.record_step(shared, 20, 2)
    # beyond the fork the shared pair always holds strictly fewer tokens
    for a, b in zip(md.per_step_kv_tokens[1:], ms.per_step_kv_tokens[1:]):
        assert b < a


def test_kv_reduction():
    a = SearchMetrics(cumulative_kv_tokens=100)
    b = SearchMetrics(cumulative_kv_tokens=100)
    assert kv_reduction(a, b) == 1.0
    b.cumulative_kv_tokens = 50
    assert kv_reduction(a, b) == 2.0
    b.cumulative_kv_tokens = 0
    with pytest.raises(ValueError):
        kv_reduction(a, b)


def test_overhead_fraction_zero():
    m = SearchMetrics(generation_time=10.0)
    assert overhead_fraction(m) == 0.0


def test_overhead_fraction_arithmetic():
    m = SearchMetrics(solver_time=1.0, cluster_time=1.0, generation_time=98.0)
    assert overhead_fraction(m) == pytest.approx(0.02)


def test_overhead_fraction_empty():
    assert overhead_fraction(SearchMetrics()) == 0.0


def test_to_dict_excludes_timings_by_default():
    m = SearchMetrics(solver_time=1.5, cumulative_kv_tokens=7)
    d = m.to_dict()
    assert "solver_time" not in d
    assert d["cumulative_kv_tokens"] == 7
    assert "solver_time" in m.to_dict(include_timings=True)
