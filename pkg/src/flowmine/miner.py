"""Refine a causality graph into one flow per (start, end) pair.

Each graph edge ``m1 -> m2`` is scored from the scorer's prediction at the
slot right after ``m1``.  In an interleaved trace that slot belongs to
``m1``'s own instance only part of the time, and a branching node splits
its own share among its successors, so raw successor mass is not compared
with ``theta`` directly.  Instead, over n sampled occurrences of ``m1``:

    s(c)   mean predicted mass of c right after m1
    b(c)   mean predicted mass of c at random slots of the same traces
    lam    median of s(c) / b(c) over the vocabulary (share of foreign events)
    z(c)   (s(c) - lam * b(c)) / se, se from the spread of the individual predictions

Under "c is not a successor of m1" z is roughly standard normal.  The z
values of all graph edges are fitted with a two-component mixture (that
null plus a fitted log-normal alternative) and an edge's score is its posterior
probability of belonging to the alternative.  An edge is kept when that
probability reaches ``theta``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .causality import CausalityGraph, reachable_subgraph
from .core import Catalog, FlowSpec, Trace
from .errors import FlowmineError, InvalidFlow, InvariantViolation, NoOccurrence, NoPath
from .seqmodel import (occurrences, sample_occurrences, scoring_traces,
                       successor_distribution, trace_background)

log = logging.getLogger(__name__)

DEFAULT_THETA = 0.75
_Z_INIT = 3.0
# keeps the fitted alternative from collapsing onto a few edges
_LOG_SD_MIN = 0.5
# background slots drawn per sampled occurrence
_DRAWS = 4
# scores stay strictly positive so that theta -> 0+ keeps every edge
_FLOOR = 1e-300


@dataclass(frozen=True)
class MinedFlow:
    start: int
    end: int
    edges: frozenset[tuple[int, int]]
    theta: float
    edge_scores: dict = field(default_factory=dict, compare=False)
    # edges of the reachable subgraph dropped by the threshold or to break a cycle
    removed: dict = field(default_factory=dict, compare=False)

    @property
    def nodes(self) -> frozenset[int]:
        return frozenset({self.start, self.end}.union(*self.edges)) if self.edges else frozenset()


@dataclass
class MiningResult:
    flows: list[MinedFlow]
    failures: list[tuple[int, int, str]]
    scores: dict

    def __iter__(self):
        return iter(self.flows)

    def __len__(self):
        return len(self.flows)


def edge_z(g: CausalityGraph, scorer, traces: Sequence[Trace], samples: int = 256,
           seed: int = 0) -> dict[tuple[int, int], float]:
    """Successor excess of every edge over its trace background, in null standard units.

    ``traces`` should be preprocessed the way the scorer's training data was
    (see ``scoring_traces``).
    """
    vocab = scorer.vocab
    real = np.ones(len(vocab), dtype=bool)
    real[0] = real[vocab.mask] = False
    adj = g.adjacency()
    out = {}
    for m1 in sorted(adj):
        cands = adj[m1]
        if not cands:
            continue
        try:
            occ = sample_occurrences(traces, m1, samples, seed, occurrences(traces, m1))
        except NoOccurrence:
            log.info("msg %d never occurs; its out-edges get no support", m1)
            out.update({(m1, c): 0.0 for c in cands})
            continue
        n = len(occ)
        rows = successor_distribution(scorer, traces, m1, samples, seed, occ=occ,
                                      per_occurrence=True)
        brows = trace_background(scorer, traces, occ, _DRAWS, seed, per_occurrence=True)
        s, base = rows.mean(axis=0), brows.mean(axis=0)
        sel = real & (base > 0)
        sel[vocab.token_of(m1)] = False
        lam = float(np.clip(np.median(s[sel] / base[sel]), 0.0, 1.0)) if sel.any() else 0.0
        # no mass at all on tokens that cannot follow m1 (m1 itself included):
        # the slot after m1 is never foreign
        impossible = real.copy()
        impossible[[vocab.token_of(c) for c in cands]] = False
        if not s[impossible].any():
            lam = 0.0
        idx = [vocab.token_of(c) for c in cands]
        # Welch-type standard error from the spread of the individual predictions
        var = (rows[:, idx].var(axis=0) / n + lam ** 2 * brows[:, idx].var(axis=0) / len(brows)
               + 1.0 / n ** 2)
        z = (s[idx] - lam * base[idx]) / np.sqrt(var)
        out.update({(m1, c): float(v) for c, v in zip(cands, z)})
    return out


def posterior(z: np.ndarray, iters: int = 200) -> np.ndarray:
    """P(alternative | z) under pi0 * N(0, 1) + (1 - pi0) * LogNormal(mu, sd^2), fitted by EM.

    z grows with sqrt(n) times the effect size, so genuine edges spread over
    orders of magnitude; a log-normal alternative covers that range and its
    right tail always outweighs the null's.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        return z
    pos = z > 0
    lz = np.log(np.where(pos, z, 1.0))
    strong = z > _Z_INIT
    pi1 = float(np.clip(strong.mean(), 0.01, 0.99))
    mu = float(lz[strong].mean()) if strong.any() else float(np.log(_Z_INIT))
    sd = _LOG_SD_MIN

    def split(pi1, mu, sd):
        la = np.where(pos, np.log(pi1) + _log_normal(lz, mu, sd) - lz, -np.inf)
        ln = np.log1p(-pi1) + _log_normal(z, 0.0, 1.0)
        return np.exp(la - np.logaddexp(la, ln))

    for _ in range(iters):
        r = split(pi1, mu, sd)
        w = r.sum()
        if w < 1e-12:
            break
        pi1 = float(np.clip(w / z.size, 1e-6, 1 - 1e-6))
        mu = float((r * lz).sum() / w)
        sd = max(_LOG_SD_MIN, float(np.sqrt((r * (lz - mu) ** 2).sum() / w)))
    post = split(pi1, mu, sd)
    # the alternative vanishes near zero faster than the null; keep the score monotone in z
    order = np.argsort(z, kind="stable")
    post[order] = np.minimum.accumulate(post[order][::-1])[::-1]
    return np.maximum(post, _FLOOR)


def _log_normal(x, mu, sd):
    return -0.5 * ((x - mu) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi)


def edge_scores(g: CausalityGraph, scorer, traces: Sequence[Trace], samples: int = 256,
                seed: int = 0) -> dict[tuple[int, int], float]:
    """Probability in (0, 1] that each edge of ``g`` is a genuine successor edge."""
    z = edge_z(g, scorer, traces, samples, seed)
    keys = sorted(z)
    post = posterior(np.array([z[k] for k in keys]))
    return {k: float(p) for k, p in zip(keys, post)}


def _prune(start, end, edges):
    fwd: dict[int, list[int]] = {}
    bwd: dict[int, list[int]] = {}
    for a, b in edges:
        fwd.setdefault(a, []).append(b)
        bwd.setdefault(b, []).append(a)

    def reach(root, adj):
        seen = {root}
        stack = [root]
        while stack:
            for m in adj.get(stack.pop(), ()):
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return seen

    keep = reach(start, fwd) & reach(end, bwd)
    return {(a, b) for a, b in edges if a in keep and b in keep}


def _find_cycle(edges):
    adj: dict[int, list[int]] = {}
    for a, b in sorted(edges):
        adj.setdefault(a, []).append(b)
    color: dict[int, int] = {}
    for root in sorted(adj):
        if color.get(root):
            continue
        stack = [(root, iter(adj.get(root, ())))]
        path = [root]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = 2
                stack.pop()
                path.pop()
            elif color.get(nxt) == 1:
                cyc = path[path.index(nxt):] + [nxt]
                return list(zip(cyc[:-1], cyc[1:]))
            elif not color.get(nxt):
                color[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(adj.get(nxt, ()))))
    return None


def mine_pair(g: CausalityGraph, scores: dict, start: int, end: int,
              theta: float = DEFAULT_THETA) -> MinedFlow:
    """Threshold one pair's reachable subgraph; raises NoPath when nothing survives."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    sub = reachable_subgraph(g, start, end)
    kept = {e for e in sub.edges if scores.get(e, 0.0) >= theta}
    removed = {e: scores.get(e, 0.0) for e in sub.edges - kept}
    kept = _prune(start, end, kept)
    while (cyc := _find_cycle(kept)) is not None:
        # weakest edge on the cycle goes; ties broken by edge order
        worst = min(cyc, key=lambda e: (scores.get(e, 0.0), e))
        removed[worst] = scores.get(worst, 0.0)
        kept = _prune(start, end, kept - {worst})
    if not kept:
        raise NoPath(start, end)
    removed.update({e: scores.get(e, 0.0) for e in sub.edges - kept - removed.keys()})
    return MinedFlow(start, end, frozenset(kept), theta,
                     {e: scores.get(e, 0.0) for e in sorted(kept)},
                     dict(sorted(removed.items())))


def mine(g: CausalityGraph, scorer, traces: Sequence[Trace], catalog: Catalog,
         theta: float = DEFAULT_THETA, samples: int = 256, seed: int = 0,
         scores: dict | None = None) -> MiningResult:
    """One MinedFlow per annotated (start, end) pair with a surviving path."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    if not catalog.start_ids or not catalog.end_ids:
        raise InvalidFlow("catalog needs at least one start and one end annotation")
    if scores is None:
        scores = edge_scores(g, scorer, scoring_traces(scorer, traces, catalog), samples, seed)
    flows, failures = [], []
    for start, end in catalog.pairs():
        try:
            flows.append(mine_pair(g, scores, start, end, theta))
        except NoPath as exc:
            failures.append((start, end, str(exc)))
        except KeyError:
            failures.append((start, end, "pair not in graph"))
    return MiningResult(flows, failures, scores)


def to_flowspec(f: MinedFlow, name: str) -> FlowSpec:
    try:
        return FlowSpec(name, f.start, frozenset({f.end}), frozenset(f.edges))
    except FlowmineError as exc:
        raise InvariantViolation(f"mined flow {f.start}->{f.end} is malformed: {exc}") from exc
