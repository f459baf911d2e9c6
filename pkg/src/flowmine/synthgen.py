"""Synthetic traces from flow instances running on simulated cores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FlowSpec, Trace
from .errors import BudgetExceeded, InfeasibleCorruption

PATH_POLICIES = ("uniform-branch",)
SPAWN_PROB = 0.5


@dataclass(frozen=True)
class GenConfig:
    flows: tuple[FlowSpec, ...]
    cores: int = 1
    runs: int = 1
    seed: int = 0
    path_policy: str = "uniform-branch"

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))
        if not self.flows:
            raise ValueError("at least one flow is required")
        if self.cores < 1 or self.runs < 1:
            raise ValueError("cores and runs must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.path_policy not in PATH_POLICIES:
            raise ValueError(f"unknown path policy {self.path_policy!r}")


@dataclass(frozen=True)
class Instance:
    flow: int
    path: tuple[int, ...]
    positions: tuple[int, ...]


def _walk(flow: FlowSpec, succ, rng) -> list[int]:
    node = flow.start
    path = [node]
    while node not in flow.ends:
        nxt = succ[node]
        node = nxt[int(rng.integers(len(nxt)))]
        path.append(node)
    return path


def generate_instances(config: GenConfig) -> tuple[Trace, list[Instance]]:
    """Trace plus the ground-truth instance each event came from."""
    rng = np.random.default_rng(config.seed)
    succ = [f.successors() for f in config.flows]
    cores: list[list | None] = [None] * config.cores
    events: list[int] = []
    instances: list[Instance] = []
    spawned = 0
    completed = 0
    while completed < config.runs:
        idle = [i for i, c in enumerate(cores) if c is None]
        active = [i for i, c in enumerate(cores) if c is not None]
        can_spawn = bool(idle) and spawned < config.runs
        if can_spawn and (not active or rng.random() < SPAWN_PROB):
            core = idle[int(rng.integers(len(idle)))]
            k = int(rng.integers(len(config.flows)))
            path = _walk(config.flows[k], succ[k], rng)
            cores[core] = [k, path, 0, []]
            spawned += 1
        else:
            core = active[int(rng.integers(len(active)))]
        state = cores[core]
        k, path, idx, pos = state
        pos.append(len(events))
        events.append(path[idx])
        state[2] = idx + 1
        if state[2] == len(path):
            instances.append(Instance(k, tuple(path), tuple(pos)))
            cores[core] = None
            completed += 1
    instances.sort(key=lambda x: x.positions[0])
    return Trace(events), instances


def generate(config: GenConfig) -> Trace:
    return generate_instances(config)[0]


def _corrupt_once(events, alphabet, rng):
    kind = int(rng.integers(3))
    n = len(events)
    if kind == 0 and n > 1:
        i = int(rng.integers(n))
        return events[:i] + events[i + 1:]
    if kind == 1 and n > 1:
        i = int(rng.integers(n - 1))
        if events[i] != events[i + 1]:
            out = list(events)
            out[i], out[i + 1] = out[i + 1], out[i]
            return out
    i = int(rng.integers(n + 1))
    return events[:i] + [alphabet[int(rng.integers(len(alphabet)))]] + events[i:]


def generate_negative(config: GenConfig, corruption_rate: float = 0.05,
                      attempts: int = 64, budget: int = 200_000) -> Trace:
    """A corrupted trace that the generating flows provably cannot fully accept.

    Corruptions (deletion, adjacent transposition, insertion of a flow
    message) are applied to a valid trace; candidates are kept only when
    the exhaustive evaluator certifies a rate below 1.
    """
    from .evaluator import evaluate_oracle

    if not 0.0 < corruption_rate <= 1.0:
        raise ValueError("corruption_rate must lie in (0, 1]")
    if all(not f.edges and f.start in f.ends for f in config.flows):
        raise InfeasibleCorruption("single-message flows accept every permutation")
    base = list(generate(config).events)
    alphabet = sorted(set().union(*(f.nodes for f in config.flows)))
    rng = np.random.default_rng([config.seed, 0x6E6567])
    count = max(1, int(round(corruption_rate * len(base))))
    for _ in range(attempts):
        events = base
        for _ in range(count):
            events = _corrupt_once(events, alphabet, rng)
        try:
            report = evaluate_oracle(config.flows, events, budget=budget)
        except BudgetExceeded:
            continue
        if report.accepted < report.total_events:
            return Trace(events)
    raise InfeasibleCorruption(
        f"no rejected corruption found in {attempts} attempts")

