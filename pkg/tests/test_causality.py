import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmine.causality import CausalityGraph, build_graph, reachable_subgraph, to_dot
from flowmine.core import PREDICATES, Catalog, Message
from flowmine.errors import NoPath
from flowmine.scenarios import (CASE_FALSE_EDGE, cache_catalog, cache_flows, case_catalog,
                                case_flows)

from .oracles import brute_force_edges, double_bfs


def random_catalog(rng, n, n_components=6):
    comps = [f"C{i}" for i in range(n_components)]
    msgs, seen = [], set()
    while len(msgs) < n:
        s, d = rng.choice(n_components, size=2, replace=False)
        key = (comps[s], comps[d], f"op{int(rng.integers(3))}")
        if key not in seen:
            seen.add(key)
            msgs.append(Message(len(msgs) + 1, *key))
    return Catalog(tuple(msgs))


def test_request_response_edge_under_literal_predicate():
    cat = Catalog((Message(1, "CPU_0", "Cache", "rd_req"), Message(2, "Cache", "CPU_0", "rd_resp")))
    g = build_graph(cat, "paper-src-dest")
    assert (1, 2) in g.edges


def test_empty_catalog_gives_empty_graph():
    g = build_graph(Catalog(()))
    assert not g.nodes and not g.edges


def test_unknown_predicate():
    with pytest.raises(ValueError):
        build_graph(cache_catalog(), "backwards")


@pytest.mark.parametrize("seed", range(50))
def test_build_graph_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cat = random_catalog(rng, int(rng.integers(1, 31)))
    for p in PREDICATES:
        g = build_graph(cat, p)
        assert set(g.edges) == brute_force_edges(cat, p)
        assert all(a != b for a, b in g.edges)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_predicates_are_monotone(seed):
    cat = random_catalog(np.random.default_rng(seed), 20)
    union = build_graph(cat, "union").edges
    assert build_graph(cat, "paper-src-dest").edges <= union
    assert build_graph(cat, "forward-dest-src").edges <= union


def test_union_graph_contains_reference_flows():
    for cat, flows in ((cache_catalog(), cache_flows()), (case_catalog(), case_flows())):
        g = build_graph(cat, "union")
        for f in flows:
            assert f.edges <= g.edges


def test_case_study_graph_has_false_edge():
    g = reachable_subgraph(build_graph(case_catalog()), 2, 26)
    assert CASE_FALSE_EDGE in g.edges


def test_dead_branch_pruned():
    g = CausalityGraph(frozenset({1, 2, 3, 4}), frozenset({(1, 2), (2, 3), (1, 4)}))
    sub = reachable_subgraph(g, 1, 3)
    assert sub.nodes == {1, 2, 3}
    assert sub.edges == {(1, 2), (2, 3)}


def test_start_equals_end_is_no_path():
    g = CausalityGraph(frozenset({1}), frozenset())
    with pytest.raises(NoPath):
        reachable_subgraph(g, 1, 1)


def test_unreachable_end_is_no_path():
    g = CausalityGraph(frozenset({1, 2, 3}), frozenset({(1, 2)}))
    with pytest.raises(NoPath):
        reachable_subgraph(g, 1, 3)


@pytest.mark.parametrize("seed", range(50))
def test_reachable_subgraph_matches_double_bfs(seed):
    rng = np.random.default_rng(seed)
    cat = random_catalog(rng, int(rng.integers(2, 31)))
    g = build_graph(cat, "union")
    ids = cat.ids
    for _ in range(5):
        s, e = (int(x) for x in rng.choice(ids, size=2, replace=False))
        want = double_bfs(g.nodes, g.edges, s, e)
        if want is None:
            with pytest.raises(NoPath):
                reachable_subgraph(g, s, e)
            continue
        sub = reachable_subgraph(g, s, e)
        assert (set(sub.nodes), set(sub.edges)) == want
        # idempotent
        again = reachable_subgraph(sub, s, e)
        assert (again.nodes, again.edges) == (sub.nodes, sub.edges)


def test_dot_export_labels_and_colours():
    cat = cache_catalog()
    text = to_dot(build_graph(cat), cat)
    assert 'msg_1 [label="msg_1\\nCPU_0:Cache:rd_req", fillcolor="green"]' in text
    assert 'fillcolor="purple"' in text
    assert text.startswith("digraph")
