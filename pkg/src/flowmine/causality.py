"""Structural causality graph over a message catalog."""
from __future__ import annotations

from dataclasses import dataclass

from .core import PREDICATES, Catalog, relation_matrix
from .errors import NoPath


@dataclass(frozen=True)
class CausalityGraph:
    nodes: frozenset[int]
    edges: frozenset[tuple[int, int]]
    predicate_tag: str = "union"
    starts: frozenset[int] = frozenset()
    ends: frozenset[int] = frozenset()

    def successors(self, node) -> list[int]:
        return sorted(b for a, b in self.edges if a == node)

    def adjacency(self) -> dict[int, list[int]]:
        adj = {n: [] for n in self.nodes}
        for a, b in sorted(self.edges):
            adj[a].append(b)
        return adj


def build_graph(catalog: Catalog, predicate_tag: str = "union") -> CausalityGraph:
    if predicate_tag not in PREDICATES:
        raise ValueError(f"unknown causality predicate {predicate_tag!r}")
    rel = relation_matrix(catalog, predicate_tag)
    ids = set(catalog.ids)
    src, dst = rel.nonzero()
    edges = frozenset((int(a), int(b)) for a, b in zip(src, dst) if a in ids and b in ids)
    return CausalityGraph(frozenset(ids), edges, predicate_tag,
                          catalog.start_ids, catalog.end_ids)


def _bfs(root, adj, blocked):
    seen = {root}
    frontier = [root]
    while frontier:
        nxt = []
        for n in frontier:
            if n == blocked:
                continue
            for m in adj.get(n, ()):
                if m not in seen:
                    seen.add(m)
                    nxt.append(m)
        frontier = nxt
    return seen


def reachable_subgraph(g: CausalityGraph, start: int, end: int) -> CausalityGraph:
    """Nodes lying on some start-to-end walk, with their connecting edges.

    The end node is terminal (never expanded forward) and the start node is
    never re-entered, so the result has no edge into ``start`` or out of
    ``end``.
    """
    if start not in g.nodes or end not in g.nodes:
        raise KeyError(f"({start}, {end}) not in graph")
    if start == end:
        raise NoPath(start, end)
    fwd = {n: [] for n in g.nodes}
    bwd = {n: [] for n in g.nodes}
    for a, b in g.edges:
        fwd[a].append(b)
        bwd[b].append(a)
    ahead = _bfs(start, fwd, blocked=end)
    behind = _bfs(end, bwd, blocked=start)
    keep = ahead & behind
    if end not in keep:
        raise NoPath(start, end)
    edges = frozenset((a, b) for a, b in g.edges
                      if a in keep and b in keep and a != end and b != start)
    return CausalityGraph(frozenset(keep), edges, g.predicate_tag,
                          frozenset({start}), frozenset({end}))


def to_dot(g: CausalityGraph, catalog: Catalog | None = None, name="cg",
           edge_labels: dict | None = None) -> str:
    """Graphviz source; start nodes green, end nodes purple."""
    lines = [f"digraph {name} {{", "  rankdir=TB;", "  node [shape=box, style=filled, fillcolor=white];"]
    for n in sorted(g.nodes):
        label = f"msg_{n}"
        if catalog is not None and n in catalog:
            label += "\\n" + catalog[n].label
        attrs = [f'label="{label}"']
        if n in g.starts:
            attrs.append('fillcolor="green"')
        elif n in g.ends:
            attrs.append('fillcolor="purple", fontcolor="white"')
        lines.append(f"  msg_{n} [{', '.join(attrs)}];")
    for a, b in sorted(g.edges):
        extra = ""
        if edge_labels and (a, b) in edge_labels:
            extra = f' [label="{edge_labels[(a, b)]:.3f}"]'
        lines.append(f"  msg_{a} -> msg_{b}{extra};")
    lines.append("}")
    return "\n".join(lines) + "\n"
