import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmine.core import FlowSpec
from flowmine.errors import InfeasibleCorruption
from flowmine.evaluator import evaluate_oracle
from flowmine.scenarios import cache_flows, case_flows
from flowmine.synthgen import GenConfig, generate, generate_instances, generate_negative

from .oracles import random_dag_flow

ABC = FlowSpec("abc", 1, frozenset({3}), frozenset({(1, 2), (2, 3)}))


def test_single_core_serializes_instances():
    assert generate(GenConfig((ABC,), cores=1, runs=2)).events == (1, 2, 3, 1, 2, 3)


def test_same_seed_same_trace():
    cfg = GenConfig(tuple(case_flows()), cores=4, runs=50, seed=42)
    assert generate(cfg) == generate(cfg)
    assert generate(cfg) != generate(GenConfig(tuple(case_flows()), cores=4, runs=50, seed=43))


@pytest.mark.parametrize("bad", [dict(cores=0), dict(runs=0), dict(seed=-1),
                                 dict(path_policy="greedy")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        GenConfig((ABC,), **bad)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.integers(1, 12))
def test_trace_partitions_into_flow_paths(seed, cores, runs):
    rng = np.random.default_rng(seed)
    flows = tuple(random_dag_flow(rng, int(rng.integers(1, 7)), 10 * k + 1, f"f{k}")
                  for k in range(int(rng.integers(1, 4))))
    trace, insts = generate_instances(GenConfig(flows, cores=cores, runs=runs, seed=seed))
    assert len(insts) == runs
    positions = sorted(p for i in insts for p in i.positions)
    assert positions == list(range(len(trace)))
    for inst in insts:
        assert inst.path in flows[inst.flow].paths()
        assert tuple(trace[p] for p in inst.positions) == inst.path
        if cores == 1:
            assert list(inst.positions) == list(range(inst.positions[0],
                                                      inst.positions[0] + len(inst.path)))


def test_cache_flows_decompose():
    flows = tuple(cache_flows())
    trace = generate(GenConfig(flows, cores=2, runs=3, seed=1))
    assert evaluate_oracle(flows, trace).acceptance_rate == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_negative_traces_are_rejected(seed):
    rng = np.random.default_rng(seed)
    flows = tuple(random_dag_flow(rng, int(rng.integers(2, 6)), 10 * k + 1, f"f{k}")
                  for k in range(int(rng.integers(1, 3))))
    cfg = GenConfig(flows, cores=int(rng.integers(1, 4)), runs=int(rng.integers(1, 8)), seed=seed)
    neg = generate_negative(cfg, corruption_rate=0.1)
    assert evaluate_oracle(flows, neg).acceptance_rate < 1.0


def test_deleting_the_last_event_leaves_an_instance_incomplete():
    neg = generate_negative(GenConfig((ABC,), cores=1, runs=1, seed=0), corruption_rate=0.3)
    assert evaluate_oracle([ABC], neg).acceptance_rate < 1.0


def test_single_message_flows_cannot_be_corrupted():
    solo = FlowSpec("solo", 1, frozenset({1}), frozenset())
    with pytest.raises(InfeasibleCorruption):
        generate_negative(GenConfig((solo,), runs=3))


def test_corruption_rate_validated():
    with pytest.raises(ValueError):
        generate_negative(GenConfig((ABC,)), corruption_rate=0.0)
