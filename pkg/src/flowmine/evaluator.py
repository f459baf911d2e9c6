"""Replay traces against flow acceptors and measure the acceptance rate.

Acceptor semantics: an instance is spawned by a flow's start message,
advances along one edge per consumed event, and finishes on reaching an end
node.  An event is accepted only when it belongs to a finished instance.

Two policies are provided.  ``evaluate_greedy`` is the linear-time replay
(start events always spawn, otherwise the oldest instance that can consume
the event takes it).  ``evaluate_oracle`` searches over every assignment of
events to instances and returns the best achievable rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .core import FlowSpec, Trace
from .errors import BudgetExceeded, InvariantViolation

DEFAULT_BUDGET = 2_000_000


@dataclass(frozen=True)
class NondetNote:
    event_index: int
    candidates: tuple[int, ...]


@dataclass
class EvalReport:
    total_events: int
    accepted: int
    rejected: int
    incomplete_instances: int
    policy: str
    notes: list[NondetNote] = field(default_factory=list)
    # (flow index, event positions) per finished instance; oracle only
    decomposition: list[tuple[int, tuple[int, ...]]] | None = None
    lower_bound: bool = False
    # states expanded by the exhaustive search
    expanded: int = 0

    @property
    def acceptance_rate(self) -> float:
        if self.total_events == 0:
            return 1.0
        return self.accepted / self.total_events


def merge_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Sum counts over several traces (the rate is recomputed, not averaged)."""
    policies = {r.policy for r in reports}
    return EvalReport(
        total_events=sum(r.total_events for r in reports),
        accepted=sum(r.accepted for r in reports),
        rejected=sum(r.rejected for r in reports),
        incomplete_instances=sum(r.incomplete_instances for r in reports),
        policy=policies.pop() if len(policies) == 1 else "mixed",
        lower_bound=any(r.lower_bound for r in reports),
    )


@dataclass(frozen=True)
class FlowAcceptor:
    """Token-game tables for a list of flows."""

    flows: tuple[FlowSpec, ...]
    succ: np.ndarray      # [flow, node, event] -> bool
    is_end: np.ndarray    # [flow, node] -> bool
    start_of: np.ndarray  # [flow] -> start id

    @classmethod
    def build(cls, flows: Sequence[FlowSpec], size: int = 0) -> "FlowAcceptor":
        flows = tuple(flows)
        size = max([size] + [max(f.nodes) + 1 for f in flows] + [1])
        succ = np.zeros((len(flows), size, size), dtype=np.bool_)
        is_end = np.zeros((len(flows), size), dtype=np.bool_)
        start_of = np.zeros(len(flows), dtype=np.int64)
        for k, f in enumerate(flows):
            for a, b in f.edges:
                succ[k, a, b] = True
            for e in f.ends:
                is_end[k, e] = True
            start_of[k] = f.start
        return cls(flows, succ, is_end, start_of)

    def widen(self, size):
        if size <= self.succ.shape[1]:
            return self
        return FlowAcceptor.build(self.flows, size)


def _as_trace(trace) -> Trace:
    return trace if isinstance(trace, Trace) else Trace(trace)


def evaluate_greedy(flows: Sequence[FlowSpec], trace) -> EvalReport:
    trace = _as_trace(trace)
    n = len(trace)
    if n == 0:
        return EvalReport(0, 0, 0, 0, "greedy-oldest")
    events = trace.as_array()
    acc = FlowAcceptor.build(flows, int(events.max()) + 1)
    owner, finished, _, note_ev, note_inst = _kernels.greedy_replay(
        events, acc.succ, acc.is_end, acc.start_of)
    accepted_mask = (owner >= 0) & np.where(owner >= 0, finished[np.maximum(owner, 0)]
                                            if finished.size else False, False)
    accepted = int(accepted_mask.sum())
    notes: dict[int, list[int]] = {}
    for t, k in zip(note_ev.tolist(), note_inst.tolist()):
        notes.setdefault(t, []).append(k)
    return EvalReport(
        total_events=n,
        accepted=accepted,
        rejected=n - accepted,
        incomplete_instances=int((~finished).sum()),
        policy="greedy-oldest",
        notes=[NondetNote(t, tuple(ks)) for t, ks in sorted(notes.items())],
    )


# ---------------------------------------------------------------------------
# exhaustive search


def _next_occurrence(events, size):
    """nxt[t, v] = first position >= t holding message v (n if none)."""
    n = len(events)
    nxt = np.full((n + 1, size), n, dtype=np.int64)
    for t in range(n - 1, -1, -1):
        nxt[t] = nxt[t + 1]
        nxt[t, events[t]] = t
    return nxt


def flow_groups(flows: Sequence[FlowSpec]) -> list[list[int]]:
    """Indices of flows grouped so that groups share no message."""
    parent = list(range(len(flows)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner: dict[int, int] = {}
    for k, f in enumerate(flows):
        for m in f.nodes:
            if m in owner:
                parent[find(k)] = find(owner[m])
            else:
                owner[m] = k
    groups: dict[int, list[int]] = {}
    for k in range(len(flows)):
        groups.setdefault(find(k), []).append(k)
    return sorted(groups.values())


def evaluate_oracle(flows: Sequence[FlowSpec], trace, budget: int = DEFAULT_BUDGET,
                    strict: bool = True) -> EvalReport:
    """Maximum acceptance rate over all event-to-instance assignments.

    Flow groups with disjoint message sets never compete for an event, so
    each group is solved on its own projection of the trace and the counts
    are added.  See ``_oracle_search`` for the search itself.
    """
    trace = _as_trace(trace)
    flows = tuple(flows)
    n = len(trace)
    if n == 0:
        return EvalReport(0, 0, 0, 0, "exhaustive", decomposition=[])
    groups = flow_groups(flows)
    if len(groups) <= 1:
        return _oracle_search(flows, trace.events, budget, strict)
    events = trace.events
    accepted = 0
    decomposition = []
    lower = False
    spent = 0
    for group in groups:
        sub = tuple(flows[k] for k in group)
        alphabet = set().union(*(f.nodes for f in sub))
        where = [t for t, e in enumerate(events) if e in alphabet]
        if not where:
            continue
        r = _oracle_search(sub, tuple(events[t] for t in where), budget - spent, False)
        spent += r.expanded
        accepted += r.accepted
        lower = lower or r.lower_bound
        if r.decomposition is not None:
            decomposition += [(group[f], tuple(where[t] for t in pos))
                              for f, pos in r.decomposition]
    if lower and strict:
        raise BudgetExceeded(accepted / n, spent)
    decomposition.sort(key=lambda x: x[1][0])
    return EvalReport(n, accepted, n - accepted, 0, "exhaustive",
                      decomposition=None if lower else decomposition, lower_bound=lower,
                      expanded=spent)


def _oracle_search(flows, events, budget, strict) -> EvalReport:
    """Forward search over the trace keeping, for every multiset of live
    instance states, the best number of events committed so far.

    An optimal assignment never leaves an instance unfinished (dropping its
    events scores the same), so only states whose instances can all still
    finish are kept, and the final state must be empty.  States that cannot
    beat the greedy solution are discarded.

    ``budget`` caps the number of expanded states.  When it runs out a
    ``BudgetExceeded`` carrying the best certified rate is raised, or, with
    ``strict=False``, a report flagged ``lower_bound`` is returned.
    """
    n = len(events)
    size = max([max(events) + 1] + [max(f.nodes) + 1 for f in flows])
    succ = [f.successors() for f in flows]
    ends = [f.ends for f in flows]
    spawners: dict[int, list[int]] = {}
    for k, f in enumerate(flows):
        spawners.setdefault(f.start, []).append(k)
    nxt = _next_occurrence(events, size)

    greedy = evaluate_greedy(flows, events)
    best_known = greedy.accepted

    def can_finish(state, t):
        # every live instance needs some successor occurrence at or after t
        for f, node in state:
            if all(nxt[t, m] >= n for m in succ[f][node]):
                return False
        return True

    # layer: state -> (gain, back pointer)
    layer: dict[tuple, tuple[int, object]] = {(): (0, None)}
    history = []
    expanded = 0
    for t, e in enumerate(events):
        remaining = n - t - 1
        new: dict[tuple, tuple[int, object]] = {}

        def offer(state, gain, back):
            if gain + remaining < best_known:
                return
            cur = new.get(state)
            if cur is None or cur[0] < gain:
                new[state] = (gain, back)

        for state, (gain, _) in layer.items():
            expanded += 1
            if expanded > budget:
                report = _greedy_as_lower_bound(greedy, expanded)
                if strict:
                    raise BudgetExceeded(report.acceptance_rate, expanded)
                return report
            offer(state, gain, (state, "reject", -1, -1))
            for f in spawners.get(e, ()):
                if e in ends[f]:
                    offer(state, gain + 1, (state, "spawn", f, e))
                else:
                    s2 = tuple(sorted(state + ((f, e),)))
                    if can_finish(((f, e),), t + 1):
                        offer(s2, gain + 1, (state, "spawn", f, e))
            seen = set()
            for i, (f, node) in enumerate(state):
                if (f, node) in seen or e not in succ[f][node]:
                    continue
                seen.add((f, node))
                rest = state[:i] + state[i + 1:]
                if e in ends[f]:
                    s2 = rest
                else:
                    if not can_finish(((f, e),), t + 1):
                        continue
                    s2 = tuple(sorted(rest + ((f, e),)))
                offer(s2, gain + 1, (state, "advance", f, node))
        # drop states with an instance that can no longer finish
        layer = {s: v for s, v in new.items() if can_finish(s, t + 1)}
        history.append(layer)
    final = layer.get(())
    if final is None:
        # greedy's own assignment is always a surviving path
        raise InvariantViolation("exhaustive search lost every complete assignment")
    gain = final[0]
    actions = []
    state = ()
    for t in range(n - 1, -1, -1):
        _, back = history[t][state]
        prev, kind, f, node = back
        actions.append((kind, f, node))
        state = prev
    actions.reverse()
    return EvalReport(n, gain, n - gain, 0, "exhaustive",
                      decomposition=_replay_actions(actions, events, ends), expanded=expanded)


def _replay_actions(actions, events, ends):
    live = []       # [flow, current node, positions]
    done = []
    for t, (kind, f, node) in enumerate(actions):
        e = events[t]
        if kind == "reject":
            continue
        if kind == "spawn":
            inst = [f, e, [t]]
            live.append(inst)
        else:
            # interchangeable instances; take the oldest at that state
            inst = next(x for x in live if x[0] == f and x[1] == node)
            inst[1] = e
            inst[2].append(t)
        if e in ends[f]:
            live.remove(inst)
            done.append(inst)
    done.sort(key=lambda x: x[2][0])
    return [(f, tuple(pos)) for f, _, pos in done]


def _greedy_as_lower_bound(greedy: EvalReport, expanded: int) -> EvalReport:
    return EvalReport(greedy.total_events, greedy.accepted, greedy.rejected,
                      0, "exhaustive", lower_bound=True, expanded=expanded)


# ---------------------------------------------------------------------------
# edge-level comparison against ground truth


@dataclass
class FlowComparison:
    precision: float
    recall: float
    # (start, end) -> (true positives, mined edges, truth edges)
    pairs: dict
    unmatched_mined: list[tuple[int, int]]
    unmatched_truth: list[tuple[int, int]]


def _pair_edges(flows: Sequence[FlowSpec]) -> dict[tuple[int, int], set]:
    """Edges of each flow restricted to paths ending at each of its end nodes."""
    out: dict[tuple[int, int], set] = {}
    for f in flows:
        bwd: dict[int, list[int]] = {}
        for a, b in f.edges:
            bwd.setdefault(b, []).append(a)
        for end in f.ends:
            seen = {end}
            stack = [end]
            while stack:
                for a in bwd.get(stack.pop(), ()):
                    if a not in seen:
                        seen.add(a)
                        stack.append(a)
            edges = {(a, b) for a, b in f.edges if a in seen and b in seen and a not in f.ends}
            out.setdefault((f.start, end), set()).update(edges)
    return out


def compare_flows(mined: Sequence[FlowSpec], truth: Sequence[FlowSpec]) -> FlowComparison:
    """Edge precision and recall over all mined and all truth edges, plus a per-pair breakdown."""
    m = _pair_edges(mined)
    t = _pair_edges(truth)
    pairs = {}
    for key in sorted(m.keys() & t.keys()):
        pairs[key] = (len(m[key] & t[key]), len(m[key]), len(t[key]))
    all_m = set().union(*m.values())
    all_t = set().union(*t.values())
    tp = len(all_m & all_t)
    return FlowComparison(
        precision=tp / len(all_m) if all_m else 1.0,
        recall=tp / len(all_t) if all_t else 1.0,
        pairs=pairs,
        unmatched_mined=sorted(m.keys() - t.keys()),
        unmatched_truth=sorted(t.keys() - m.keys()),
    )
