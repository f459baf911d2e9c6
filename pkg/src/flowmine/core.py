"""Domain types, file formats and trace preprocessing."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from . import _kernels
from .errors import DuplicateMessage, InvalidFlow, ParseError, UnknownId

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

PREDICATES = ("paper-src-dest", "forward-dest-src", "union")
DEFAULT_SLICE_WINDOW = 16


@dataclass(frozen=True)
class Message:
    id: int
    src: str
    dest: str
    cmd: str

    def __post_init__(self):
        if not isinstance(self.id, int) or self.id <= 0:
            raise ValueError(f"message id must be a positive integer, got {self.id!r}")
        if not self.src or not self.dest:
            raise ValueError(f"message {self.id}: src and dest must be non-empty")

    @property
    def label(self) -> str:
        return f"{self.src}:{self.dest}:{self.cmd}"


@dataclass(frozen=True)
class Catalog:
    messages: tuple[Message, ...] = ()
    start_ids: frozenset[int] = frozenset()
    end_ids: frozenset[int] = frozenset()
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "start_ids", frozenset(self.start_ids))
        object.__setattr__(self, "end_ids", frozenset(self.end_ids))
        by_id = {}
        triples = set()
        for m in self.messages:
            if m.id in by_id:
                raise DuplicateMessage(f"duplicate message id {m.id}")
            key = (m.src, m.dest, m.cmd)
            if key in triples:
                raise DuplicateMessage(f"duplicate message triple {m.label}")
            by_id[m.id] = m
            triples.add(key)
        for i in sorted(self.start_ids | self.end_ids):
            if i not in by_id:
                raise UnknownId(i)
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self):
        return len(self.messages)

    def __contains__(self, msg_id):
        return msg_id in self._by_id

    def __getitem__(self, msg_id) -> Message:
        return self._by_id[msg_id]

    @property
    def ids(self) -> list[int]:
        return [m.id for m in self.messages]

    @property
    def max_id(self) -> int:
        return max(self._by_id, default=0)

    def pairs(self) -> list[tuple[int, int]]:
        """All annotated (start, end) pairs, in sorted order."""
        return [(s, e) for s in sorted(self.start_ids) for e in sorted(self.end_ids)]


@dataclass(frozen=True)
class Trace:
    events: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(int(e) for e in self.events))

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, idx):
        return self.events[idx]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.events, dtype=np.int64)

    def validate(self, catalog: Catalog, line=None):
        for pos, e in enumerate(self.events, start=1):
            if e not in catalog:
                raise UnknownId(e, line=line, position=pos)


@dataclass(frozen=True)
class FlowSpec:
    """Rooted DAG over message ids; branches are alternative paths."""

    name: str
    start: int
    ends: frozenset[int]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        object.__setattr__(self, "ends", frozenset(int(e) for e in self.ends))
        object.__setattr__(
            self, "edges", frozenset((int(a), int(b)) for a, b in self.edges))
        self._check()

    @property
    def nodes(self) -> frozenset[int]:
        ns = {self.start, *self.ends}
        for a, b in self.edges:
            ns.add(a)
            ns.add(b)
        return frozenset(ns)

    def successors(self) -> dict[int, list[int]]:
        succ = {n: [] for n in self.nodes}
        for a, b in sorted(self.edges):
            succ[a].append(b)
        return succ

    def _check(self):
        if not self.ends:
            raise InvalidFlow(f"flow {self.name!r} has no end node")
        for a, b in self.edges:
            if a == b:
                raise InvalidFlow(f"flow {self.name!r}: self-loop on {a}")
            if b == self.start:
                raise InvalidFlow(f"flow {self.name!r}: edge into start {self.start}")
        succ = self.successors()
        # Kahn's algorithm doubles as the cycle check
        indeg = {n: 0 for n in succ}
        for _, b in self.edges:
            indeg[b] += 1
        queue = [n for n, d in indeg.items() if d == 0]
        seen = 0
        while queue:
            n = queue.pop()
            seen += 1
            for m in succ[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    queue.append(m)
        if seen != len(succ):
            raise InvalidFlow(f"flow {self.name!r} contains a cycle")
        fwd = _reach(self.start, succ)
        missing = set(succ) - fwd
        if missing:
            raise InvalidFlow(
                f"flow {self.name!r}: nodes {sorted(missing)} unreachable from start")
        pred = {n: [] for n in succ}
        for a, b in self.edges:
            pred[b].append(a)
        back = set()
        for e in self.ends:
            back |= _reach(e, pred)
        dead = set(succ) - back
        if dead:
            raise InvalidFlow(
                f"flow {self.name!r}: nodes {sorted(dead)} never reach an end")

    def paths(self) -> list[tuple[int, ...]]:
        """Every start-to-end path; a path stops at the first end node."""
        succ = self.successors()
        out = []

        def walk(node, acc):
            if node in self.ends:
                out.append(tuple(acc))
                return
            for m in succ[node]:
                walk(m, acc + [m])

        walk(self.start, [self.start])
        return out


def _reach(root, adj):
    seen = {root}
    stack = [root]
    while stack:
        n = stack.pop()
        for m in adj.get(n, ()):
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return seen


# ---------------------------------------------------------------------------
# causality predicates


def causal(mi: Message, mj: Message, predicate: str = "union") -> bool:
    """Structural causality between two catalog messages (self-pairs excluded)."""
    if mi.id == mj.id:
        return False
    if predicate == "paper-src-dest":
        return mi.src == mj.dest
    if predicate == "forward-dest-src":
        return mi.dest == mj.src
    if predicate == "union":
        return mi.src == mj.dest or mi.dest == mj.src
    raise ValueError(f"unknown causality predicate {predicate!r}")


def relation_matrix(catalog: Catalog, predicate: Union[str, Callable] = "union") -> np.ndarray:
    """Boolean matrix ``R[a, b]`` indexed by message id."""
    size = catalog.max_id + 1
    rel = np.zeros((size, size), dtype=np.bool_)
    if callable(predicate):
        test = predicate
    else:
        if predicate not in PREDICATES:
            raise ValueError(f"unknown causality predicate {predicate!r}")
        test = lambda a, b: causal(a, b, predicate)  # noqa: E731
    for a in catalog.messages:
        for b in catalog.messages:
            if a.id != b.id and test(a, b):
                rel[a.id, b.id] = True
    return rel


def causality_slice(trace: Trace, catalog: Catalog,
                    predicate: Union[str, Callable] = "union",
                    window: int = DEFAULT_SLICE_WINDOW) -> list[Trace]:
    """Split a trace into causally connected subsequences.

    Two occurrences at positions ``i < j`` with ``j - i <= window`` are linked
    when the predicate holds for ``(m_i, m_j)``; slices are the connected
    components of that linkage, ordered by their first position.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    events = trace.as_array()
    if events.size == 0:
        return []
    labels = _kernels.slice_labels(events, relation_matrix(catalog, predicate), window)
    groups: dict[int, list[int]] = {}
    for e, lab in zip(trace.events, labels.tolist()):
        groups.setdefault(lab, []).append(e)
    return [Trace(groups[k]) for k in sorted(groups)]


# ---------------------------------------------------------------------------
# file formats

CATALOG_HEADER = "# id,src,dest,cmd"
_ID_LIST = re.compile(r"[,\s]+")


def _parse_id_list(text, lineno, path):
    out = []
    for tok in _ID_LIST.split(text.strip()):
        if not tok:
            continue
        try:
            out.append(int(tok))
        except ValueError:
            raise ParseError(f"bad id {tok!r}", lineno, path) from None
    return out


def loads_catalog(text: str, path=None) -> Catalog:
    messages = []
    seen = set()
    starts, ends = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        lower = line.lower()
        if lower.startswith("start:"):
            starts += _parse_id_list(line[6:], lineno, path)
            continue
        if lower.startswith("end:"):
            ends += _parse_id_list(line[4:], lineno, path)
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ParseError("expected 'id,src,dest,cmd'", lineno, path)
        try:
            msg_id = int(parts[0])
        except ValueError:
            raise ParseError(f"bad id {parts[0]!r}", lineno, path) from None
        if msg_id in seen:
            raise DuplicateMessage(f"duplicate message id {msg_id} (line {lineno})")
        seen.add(msg_id)
        try:
            messages.append(Message(msg_id, parts[1], parts[2], parts[3]))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    return Catalog(tuple(messages), frozenset(starts), frozenset(ends))


def parse_catalog(path: PathLike) -> Catalog:
    path = Path(path)
    return loads_catalog(path.read_text(), path=str(path))


def dumps_catalog(catalog: Catalog) -> str:
    lines = [CATALOG_HEADER]
    if catalog.start_ids:
        lines.append("start: " + ",".join(str(i) for i in sorted(catalog.start_ids)))
    if catalog.end_ids:
        lines.append("end: " + ",".join(str(i) for i in sorted(catalog.end_ids)))
    for m in catalog.messages:
        lines.append(f"{m.id},{m.src},{m.dest},{m.cmd}")
    return "\n".join(lines) + "\n"


def write_catalog(catalog: Catalog, path: PathLike):
    Path(path).write_text(dumps_catalog(catalog))


def loads_traces(text: str, catalog: Catalog | None = None) -> list[Trace]:
    traces = []
    skipped = 0
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            skipped += 1
            continue
        try:
            trace = Trace(int(tok) for tok in line.split())
        except ValueError:
            raise ParseError("trace ids must be decimal integers", lineno) from None
        if catalog is not None:
            trace.validate(catalog, line=lineno)
        traces.append(trace)
    # the final newline terminator yields one empty split element
    if text.endswith("\n") or not text:
        skipped -= 1
    if skipped > 0:
        log.warning("skipped %d empty trace line(s)", skipped)
    return traces


def parse_traces(path: PathLike, catalog: Catalog | None = None) -> list[Trace]:
    return loads_traces(Path(path).read_text(), catalog)


def dumps_traces(traces: Iterable[Trace]) -> str:
    return "".join(" ".join(str(e) for e in t.events) + "\n" for t in traces)


def write_traces(traces: Iterable[Trace], path: PathLike):
    Path(path).write_text(dumps_traces(traces))


def loads_flows(text: str, path=None) -> list[FlowSpec]:
    flows = []
    cur = None

    def close():
        if cur is None:
            return
        if cur["start"] is None:
            raise ParseError(f"flow {cur['name']!r} has no start line", cur["line"], path)
        flows.append(FlowSpec(cur["name"], cur["start"], frozenset(cur["ends"]),
                              frozenset(cur["edges"])))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        try:
            if key == "flow":
                close()
                cur = {"name": " ".join(args) or f"flow{len(flows)}", "start": None,
                       "ends": [], "edges": [], "line": lineno}
                continue
            if cur is None:
                # a file may omit the 'flow' line for a single anonymous flow
                cur = {"name": Path(path).stem if path else "flow", "start": None,
                       "ends": [], "edges": [], "line": lineno}
            if key == "start" and len(args) == 1:
                cur["start"] = int(args[0])
            elif key == "end" and len(args) == 1:
                cur["ends"].append(int(args[0]))
            elif key == "edge" and len(args) == 2:
                cur["edges"].append((int(args[0]), int(args[1])))
            else:
                raise ParseError(f"unrecognized line {line!r}", lineno, path)
        except ValueError:
            raise ParseError(f"bad id in {line!r}", lineno, path) from None
    close()
    return flows


def parse_flows(path: PathLike) -> list[FlowSpec]:
    path = Path(path)
    if path.is_dir():
        flows = []
        for p in sorted(path.glob("*.flow")):
            flows += loads_flows(p.read_text(), path=str(p))
        return flows
    return loads_flows(path.read_text(), path=str(path))


def dumps_flows(flows: Sequence[FlowSpec]) -> str:
    lines = []
    for f in flows:
        lines.append(f"flow {f.name}")
        lines.append(f"start {f.start}")
        for e in sorted(f.ends):
            lines.append(f"end {e}")
        for a, b in sorted(f.edges):
            lines.append(f"edge {a} {b}")
    return "\n".join(lines) + "\n"


def write_flows(flows: Sequence[FlowSpec], path: PathLike):
    Path(path).write_text(dumps_flows(flows))
