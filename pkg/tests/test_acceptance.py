"""One test per acceptance criterion; each prints a PASS/FAIL line.

The two long training runs (criteria 1, 2 and the case-study half of 8) are
marked ``slow``; deselect them with ``-m "not slow"``.
"""
import time

import numpy as np
import pytest

from flowmine.causality import build_graph, reachable_subgraph
from flowmine.core import PREDICATES
from flowmine.errors import InfeasibleCorruption, NoPath
from flowmine.evaluator import compare_flows, evaluate_greedy, evaluate_oracle
from flowmine.miner import mine, mine_pair, to_flowspec
from flowmine.scenarios import (AMBIGUOUS_TRACE, BENCHMARKS, CASE_FALSE_EDGE, ambiguous_flow,
                                benchmark, case_catalog, case_flows)
from flowmine.seqmodel import ModelConfig, train, train_ngram
from flowmine.seqmodel import transformer as tf
from flowmine.synthgen import GenConfig, generate, generate_negative

from .oracles import (brute_force_accepted, brute_force_edges, double_bfs, greedy_by_hand,
                      random_dag_flow)
from .test_causality import random_catalog
from .test_evaluator import _suite
from .test_miner import THETAS, planted
from .test_seqmodel import TOY, TOY_CFG, _grad_check

# case-study recipe: the default 2-layer model, longer training than the library default
CASE_EPOCHS = 2000
CASE_LR = 2e-3
CASE_SEED = 0
CASE_BUDGET_S = 30 * 60
BENCH_EPOCHS = 200


@pytest.fixture(scope="module")
def case_run():
    t0 = time.perf_counter()
    cat, flows = case_catalog(), case_flows()
    traces = [generate(GenConfig(tuple(flows), cores=4, runs=600, seed=CASE_SEED))]
    cfg = ModelConfig(epochs=CASE_EPOCHS, learning_rate=CASE_LR, seed=CASE_SEED)
    scorer = train(traces, cat, cfg)
    g = build_graph(cat)
    result = mine(g, scorer, traces, cat, theta=0.75)
    return dict(cat=cat, flows=flows, traces=traces, scorer=scorer, g=g, result=result,
                seconds=time.perf_counter() - t0)


@pytest.mark.slow
def test_1_case_study_reproduction(case_run, criterion):
    cpu0 = case_flows()[0]
    mined = {(f.start, f.end): f for f in case_run["result"].flows}
    f = mined.get((cpu0.start, max(cpu0.ends)))
    if f is None:
        ok, detail = False, "pair (2, 26) not mined"
    else:
        cmp = compare_flows([to_flowspec(f, "cpu0")], [cpu0])
        false_gone = CASE_FALSE_EDGE not in f.edges
        in_time = case_run["seconds"] <= CASE_BUDGET_S
        ok = cmp.precision == 1.0 and cmp.recall == 1.0 and false_gone and in_time
        detail = (f"pair (2, 26) precision {cmp.precision:.3f} recall {cmp.recall:.3f}, "
                  f"edge 19->27 removed: {false_gone}, {case_run['seconds']:.0f} s")
    other = case_flows()[1]
    g = mined.get((other.start, max(other.ends)))
    detail += f"; pair (30, 33) exact: {g is not None and g.edges == other.edges}"
    assert criterion(1, ok, detail)


@pytest.mark.slow
def test_2_acceptance_rate_band(criterion):
    rates, parts = [], []
    for name in BENCHMARKS:
        cat, flows, cfg = benchmark(name, 0)
        traces = [generate(cfg)]
        scorer = train(traces, cat, ModelConfig(epochs=BENCH_EPOCHS, learning_rate=CASE_LR))
        res = mine(build_graph(cat), scorer, traces, cat)
        mined = [to_flowspec(f, f"m{i}") for i, f in enumerate(res.flows)]
        r = evaluate_oracle(mined, traces[0], strict=False) if mined else None
        rate = r.acceptance_rate if r else 0.0
        rates.append(rate)
        bound = " (lower bound)" if r and r.lower_bound else ""
        parts.append(f"{name} {rate:.3f}{bound}")
    ok = min(rates) >= 0.90
    assert criterion(2, ok, "oracle rates " + ", ".join(parts) + " (need >= 0.90)")


def test_3_ambiguous_trace_nondeterminism(criterion):
    flow = ambiguous_flow()
    r = evaluate_oracle([flow], AMBIGUOUS_TRACE)
    paths = sorted(tuple(AMBIGUOUS_TRACE[p] for p in pos) for _, pos in r.decomposition)
    want = sorted([(1, 5, 4), (1, 2, 3, 4), (1, 5, 4)])
    g = evaluate_greedy([flow], AMBIGUOUS_TRACE)
    hand_accepted, hand_incomplete = greedy_by_hand([flow], AMBIGUOUS_TRACE)
    ok = (r.acceptance_rate == 1.0 and paths == want and g.acceptance_rate <= 1.0
          and (g.accepted, g.incomplete_instances) == (hand_accepted, hand_incomplete))
    assert criterion(3, ok, f"oracle {r.acceptance_rate} with {paths}; greedy "
                            f"{g.acceptance_rate} vs hand {hand_accepted}/{len(AMBIGUOUS_TRACE)}")


def _duality_config(rng, seed):
    flows = tuple(random_dag_flow(rng, int(rng.integers(2, 9)), 10 * k + 1, f"f{k}")
                  for k in range(int(rng.integers(1, 5))))
    longest = max(len(p) for f in flows for p in f.paths())
    runs = int(rng.integers(1, 200 // longest + 1))
    return GenConfig(flows, cores=int(rng.integers(1, 5)), runs=runs, seed=seed)


def test_4_generator_evaluator_duality(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    bad, longest = [], 0
    for i in range(100):
        cfg = _duality_config(rng, i)
        pos = generate(cfg)
        longest = max(longest, len(pos))
        try:
            neg = generate_negative(cfg, corruption_rate=0.1)
        except InfeasibleCorruption:
            bad.append((i, "no corruption"))
            continue
        if evaluate_oracle(cfg.flows, pos).acceptance_rate != 1.0:
            bad.append((i, "positive"))
        if evaluate_oracle(cfg.flows, neg).acceptance_rate >= 1.0:
            bad.append((i, "negative"))
    secs = time.perf_counter() - t0
    ok = not bad and secs <= 120 and longest <= 200
    assert criterion(4, ok, f"100 configs, {len(bad)} violations, longest trace {longest}, "
                            f"{secs:.1f} s")


def test_5_oracle_equals_brute_force(criterion):
    cases = _suite(600, seed=2024)
    wrong = sum(evaluate_oracle(f, e).accepted != brute_force_accepted(f, e) for f, e in cases)
    assert criterion(5, wrong == 0, f"{len(cases)} cases, {wrong} mismatches")


def test_6_causality_graph_correctness(criterion):
    graph_bad = sub_bad = checked = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        cat = random_catalog(rng, int(rng.integers(2, 31)))
        for p in PREDICATES:
            graph_bad += set(build_graph(cat, p).edges) != brute_force_edges(cat, p)
        g = build_graph(cat, "union")
        for _ in range(5):
            s, e = (int(x) for x in rng.choice(cat.ids, size=2, replace=False))
            want = double_bfs(g.nodes, g.edges, s, e)
            try:
                sub = reachable_subgraph(g, s, e)
                got = (set(sub.nodes), set(sub.edges))
            except NoPath:
                got = None
            sub_bad += got != want
            checked += 1
    ok = graph_bad == 0 and sub_bad == 0
    assert criterion(6, ok, f"50 catalogs x 3 predicates: {graph_bad} graph mismatches; "
                            f"{checked} pairs: {sub_bad} subgraph mismatches")


def test_7_model_numerics(criterion):
    rng = np.random.default_rng(0)
    params = tf.init_params(7, 4, 8, 2, 1, rng)
    for p in params.values():
        p += rng.standard_normal(p.shape) * 0.3
    worst = max(_grad_check(params, np.array([[1, 6, 3, 2], [4, 6, 5, 0]]),
                            np.array([[-1, 2, -1, -1], [-1, 3, 1, -1]]), heads=2).values())
    from flowmine.core import Trace
    toy = train([Trace([1, 2, 3])] * 100 + [Trace([1, 4, 5])] * 100, TOY, TOY_CFG)
    toks = rng.integers(0, len(toy.vocab), size=(50, 8))
    sums = toy.score_windows(toks, rng.integers(0, 8, size=50)).sum(axis=1)
    sum_err = float(np.abs(sums - 1).max())
    v = toy.vocab
    a, b = toy.score([1, -1, 3], 1), toy.score([1, -1, 5], 1)
    bidir = a[v.token_of(2)] > 0.9 and b[v.token_of(4)] > 0.9
    trace = generate(GenConfig(tuple(case_flows()), cores=4, runs=600, seed=0))
    hist = train([trace], case_catalog(), ModelConfig(epochs=10, seed=0)).history
    ok = worst <= 1e-4 and sum_err <= 1e-6 and bidir and hist[-1] < hist[0]
    assert criterion(7, ok, f"grad rel err {worst:.1e}, max |sum-1| {sum_err:.1e}, "
                            f"right context decides slot: {bidir}, "
                            f"loss {hist[0]:.3f} -> {hist[-1]:.3f}")


@pytest.mark.slow
def test_8_miner_properties(case_run, criterion):
    g, scores = case_run["g"], case_run["result"].scores
    mono = True
    for s, e in case_run["cat"].pairs():
        prev = None
        for t in THETAS:
            try:
                edges = mine_pair(g, scores, s, e, t).edges
            except NoPath:
                edges = frozenset()
            mono &= prev is None or edges <= prev
            prev = edges
    recovered = 0
    for seed in range(25):
        flow, pg, traces, cat = planted(seed)
        res = mine(pg, train_ngram(traces, cat, order=2), traces, cat)
        if res.flows:
            c = compare_flows([to_flowspec(res.flows[0], "p")], [flow])
            recovered += (c.precision, c.recall) == (1.0, 1.0)
    ok = mono and recovered == 25
    assert criterion(8, ok, f"theta-monotone over {THETAS}: {mono}; planted flows recovered "
                            f"exactly {recovered}/25")
