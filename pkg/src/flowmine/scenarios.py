"""Reference flow sets: the two-CPU cache example, the CPU0/UART case study
and the ambiguous-instance example, plus the synthetic benchmark suite.
"""
from __future__ import annotations

from .core import Catalog, FlowSpec, Message

# -- two CPUs reading through a shared cache --------------------------------

CACHE_TRACE = (1, 3, 5, 1, 5, 6, 2, 3, 6, 2, 4, 4)


def cache_catalog() -> Catalog:
    msgs = (
        Message(1, "CPU_0", "Cache", "rd_req"),
        Message(2, "CPU_1", "Cache", "rd_req"),
        Message(3, "Cache", "Mem", "rd_req"),
        Message(4, "Mem", "CPU_1", "rd_resp"),
        Message(5, "Mem", "CPU_0", "rd_resp"),
        Message(6, "CPU_0", "Cache", "ack"),
    )
    return Catalog(msgs, frozenset({1, 2}), frozenset({4, 6}))


def cache_flows() -> list[FlowSpec]:
    return [
        FlowSpec("cpu0_read", 1, frozenset({6}),
                 frozenset({(1, 3), (3, 5), (1, 5), (5, 6)})),
        FlowSpec("cpu1_read", 2, frozenset({4}),
                 frozenset({(2, 3), (3, 4), (2, 4)})),
    ]


# -- ambiguous instance assignment -------------------------------------------

AMBIGUOUS_TRACE = (1, 1, 5, 1, 2, 5, 4, 4, 3, 4)


def ambiguous_flow() -> FlowSpec:
    return FlowSpec("ambiguous", 1, frozenset({4}),
                    frozenset({(1, 2), (1, 5), (2, 3), (2, 5), (3, 4), (5, 4)}))


# -- CPU0 read and UART upstream read ----------------------------------------
#
# 14 messages, 4 of them (19, 20, 21, 22) used by both flows.  Both flows
# have three alternative paths.  The union causality graph links 19 -> 27
# (L2 miss request vs. snoop into L2) although 27 never follows 19.

CASE_START, CASE_END = 2, 26
CASE_FALSE_EDGE = (19, 27)


def case_catalog() -> Catalog:
    msgs = (
        Message(2, "CPU0", "L1", "rd_req"),
        Message(4, "L1", "Tag", "lookup"),
        Message(5, "Tag", "L1", "hit"),
        Message(15, "L1", "L2", "rd_req"),
        Message(19, "L2", "NoC", "rd_req"),
        Message(20, "NoC", "Mem", "rd_req"),
        Message(21, "Mem", "NoC", "rd_resp"),
        Message(22, "NoC", "L2", "rd_resp"),
        Message(23, "L2", "L1", "rd_resp"),
        Message(26, "L1", "CPU0", "rd_resp"),
        Message(27, "NoC", "L2", "snoop"),
        Message(30, "UART", "NoC", "rd_req"),
        Message(32, "L2", "NoC", "snoop_resp"),
        Message(33, "NoC", "UART", "rd_resp"),
    )
    return Catalog(msgs, frozenset({2, 30}), frozenset({26, 33}))


def cpu0_read() -> FlowSpec:
    return FlowSpec("CPU0_Read", 2, frozenset({26}), frozenset({
        (2, 4), (4, 5), (5, 26),                       # L1 hit
        (2, 15), (15, 23), (23, 26),                   # L2 hit
        (15, 19), (19, 20), (20, 21), (21, 22), (22, 23),  # memory fill
    }))


def uart_upstream_read() -> FlowSpec:
    return FlowSpec("UART_Upstream_Read", 30, frozenset({33}), frozenset({
        (30, 33),                                      # served by the NoC buffer
        (30, 27), (27, 32), (32, 33),                  # snoop hit in L2
        (27, 19), (19, 20), (20, 21), (21, 22), (22, 32),  # snoop miss, fill L2
    }))


def case_flows() -> list[FlowSpec]:
    return [cpu0_read(), uart_upstream_read()]


# -- synthetic benchmark suite ------------------------------------------------

# name -> (catalog size, cores, target trace length)
BENCHMARKS = {
    "small-10": (22, 10, 920),
    "small-20": (22, 20, 1840),
    "large-10": (60, 10, 4360),
    "large-20": (60, 20, 8720),
}
# Each flow is a random DAG owned by its own group of components (one IP
# subsystem per flow).  Endpoints are assigned so that every flow edge
# satisfies dest(m1) == src(m2), which places it in the causality graph.

_BENCH_FLOW_SIZES = {22: (5, 5, 6, 6), 60: (6,) * 10}


def _random_dag(k, rng):
    """Edges over nodes 0..k-1 in topological order; 0 is the start, k-1 the end."""
    edges = set()
    for v in range(1, k):
        preds = rng.choice(v, size=min(v, 1 + int(rng.random() < 0.35)), replace=False)
        edges.update((int(u), v) for u in preds)
    # every node except the end needs a successor
    for u in range(k - 1):
        if not any(a == u for a, _ in edges):
            edges.add((u, int(rng.integers(u + 1, k))))
    return edges


def _assign_endpoints(k, edges):
    parent = list(range(2 * k))     # variables: src(v) = v, dest(v) = k + v

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        parent[find(k + u)] = find(v)
    names: dict[int, int] = {}
    out = []
    for v in range(k):
        s, d = find(v), find(k + v)
        if s == d:
            return None
        out.append((names.setdefault(s, len(names)), names.setdefault(d, len(names))))
    return out


def benchmark_flows(size: int, seed: int = 0) -> tuple[Catalog, list[FlowSpec]]:
    import numpy as np

    if size not in _BENCH_FLOW_SIZES:
        raise ValueError(f"no benchmark with {size} messages")
    rng = np.random.default_rng([seed, size])
    msgs, flows = [], []
    next_id = 1
    for fi, k in enumerate(_BENCH_FLOW_SIZES[size]):
        while True:
            edges = _random_dag(k, rng)
            ends = _assign_endpoints(k, edges)
            if ends is not None:
                break
        ids = list(range(next_id, next_id + k))
        next_id += k
        for v, (s, d) in enumerate(ends):
            msgs.append(Message(ids[v], f"ip{fi}_c{s}", f"ip{fi}_c{d}", f"op{v}"))
        flows.append(FlowSpec(f"flow{fi}", ids[0], frozenset({ids[-1]}),
                              frozenset((ids[u], ids[v]) for u, v in edges)))
    catalog = Catalog(tuple(msgs), frozenset(f.start for f in flows),
                      frozenset(e for f in flows for e in f.ends))
    return catalog, flows


def mean_path_length(flow: FlowSpec) -> float:
    """Expected instance length under uniform branch choice."""
    succ = flow.successors()
    memo: dict[int, float] = {}

    def walk(n):
        if n in flow.ends:
            return 1.0
        if n not in memo:
            memo[n] = 1.0 + sum(walk(m) for m in succ[n]) / len(succ[n])
        return memo[n]

    return walk(flow.start)


def benchmark(name: str, seed: int = 0):
    """(catalog, flows, GenConfig) sized to the named benchmark's trace length."""
    from .synthgen import GenConfig

    size, cores, length = BENCHMARKS[name]
    catalog, flows = benchmark_flows(size, seed)
    mean_len = sum(mean_path_length(f) for f in flows) / len(flows)
    runs = max(1, int(round(length / mean_len)))
    return catalog, flows, GenConfig(tuple(flows), cores=cores, runs=runs, seed=seed)


SCENARIOS = ("case-study", "cache") + tuple(BENCHMARKS)


def scenario(name: str, seed: int = 0) -> tuple[Catalog, list[FlowSpec]]:
    """Catalog and ground-truth flows of a named scenario."""
    if name == "case-study":
        return case_catalog(), case_flows()
    if name == "cache":
        return cache_catalog(), cache_flows()
    if name in BENCHMARKS:
        return benchmark_flows(BENCHMARKS[name][0], seed)
    raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
