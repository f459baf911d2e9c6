"""Hot inner loops, compiled with numba when available.

Set ``FLOWMINE_NUMBA=0`` to force the reference path (numpy where the loop
vectorizes, plain Python where it is inherently sequential).  Both paths
must return identical results; ``tests/test_kernels.py`` checks this and
``benchmarks/bench_kernels.py`` times them.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("FLOWMINE_NUMBA", "1") != "0"


# ---------------------------------------------------------------------------
# causality slicing


def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


def _slice_labels_loop(events, related, window):
    n = events.shape[0]
    parent = np.arange(n)
    for j in range(n):
        lo = j - window
        if lo < 0:
            lo = 0
        for i in range(lo, j):
            if related[events[i], events[j]]:
                ri = _find(parent, i)
                rj = _find(parent, j)
                if ri != rj:
                    if ri < rj:
                        parent[rj] = ri
                    else:
                        parent[ri] = rj
    labels = np.empty(n, dtype=np.int64)
    for j in range(n):
        labels[j] = _find(parent, j)
    return labels


def _slice_labels_numpy(events, related, window):
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    n = events.shape[0]
    rows, cols = [], []
    for d in range(1, min(window, n - 1) + 1):
        hit = related[events[:-d], events[d:]]
        idx = np.nonzero(hit)[0]
        rows.append(idx)
        cols.append(idx + d)
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
    else:
        r = c = np.zeros(0, dtype=np.int64)
    graph = coo_matrix((np.ones(r.shape[0]), (r, c)), shape=(n, n))
    _, comp = connected_components(graph, directed=True, connection="weak")
    # representative = smallest position in the component
    rep = np.full(comp.max() + 1 if n else 0, n, dtype=np.int64)
    np.minimum.at(rep, comp, np.arange(n))
    return rep[comp]


if USE_NUMBA:
    _find = numba.njit(cache=True)(_find)
    _slice_labels_jit = numba.njit(cache=True)(_slice_labels_loop)


def slice_labels(events, related, window):
    """Component label (smallest member position) for every trace position."""
    events = np.ascontiguousarray(events, dtype=np.int64)
    related = np.ascontiguousarray(related, dtype=np.bool_)
    if events.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if USE_NUMBA:
        return _slice_labels_jit(events, related, int(window))
    return _slice_labels_numpy(events, related, int(window))


# ---------------------------------------------------------------------------
# successor counting for the n-gram scorer


def _bigram_loop(events, vocab_size):
    counts = np.zeros((vocab_size, vocab_size), dtype=np.int64)
    for i in range(events.shape[0] - 1):
        counts[events[i], events[i + 1]] += 1
    return counts


if USE_NUMBA:
    _bigram_jit = numba.njit(cache=True)(_bigram_loop)


def _bigram_numpy(events, vocab_size):
    counts = np.zeros((vocab_size, vocab_size), dtype=np.int64)
    if events.shape[0] > 1:
        np.add.at(counts, (events[:-1], events[1:]), 1)
    return counts


def bigram_counts(events, vocab_size):
    events = np.ascontiguousarray(events, dtype=np.int64)
    if USE_NUMBA:
        return _bigram_jit(events, int(vocab_size))
    return _bigram_numpy(events, int(vocab_size))


# ---------------------------------------------------------------------------
# greedy acceptor replay
#
# Flow tables: succ[f, a, b] edge flags, is_end[f, v], start_of[f].
# An instance carries one hypothesis node per flow (-1 = dead); it starts
# with every flow whose start message spawned it and keeps only the
# hypotheses that advance on each consumed event.


def _greedy_loop(events, succ, is_end, start_of):
    n = events.shape[0]
    n_flows = succ.shape[0]
    owner = np.full(n, -1, dtype=np.int64)
    ncand = np.zeros(n, dtype=np.int64)
    n_starts = 0
    for t in range(n):
        for f in range(n_flows):
            if start_of[f] == events[t]:
                n_starts += 1
                break
    cap = n_starts if n_starts > 0 else 1
    node = np.full((cap, n_flows), -1, dtype=np.int64)
    done = np.zeros(cap, dtype=np.bool_)
    n_inst = 0
    # flat candidate record: (event, instance) pairs for ambiguous events
    note_ev = np.empty(16, dtype=np.int64)
    note_inst = np.empty(16, dtype=np.int64)
    n_notes = 0
    for t in range(n):
        e = events[t]
        spawned = False
        for f in range(n_flows):
            if start_of[f] == e:
                if not spawned:
                    spawned = True
                    owner[t] = n_inst
                node[n_inst, f] = e
                if is_end[f, e]:
                    done[n_inst] = True
        if spawned:
            n_inst += 1
            continue
        best = -1
        best_flow = n_flows
        count = 0
        for k in range(n_inst):
            if done[k]:
                continue
            fmin = n_flows
            for f in range(n_flows):
                v = node[k, f]
                if v >= 0 and succ[f, v, e]:
                    fmin = f
                    break
            if fmin == n_flows:
                continue
            count += 1
            if n_notes + 1 > note_ev.shape[0]:
                grown_ev = np.empty(note_ev.shape[0] * 2, dtype=np.int64)
                grown_inst = np.empty(note_ev.shape[0] * 2, dtype=np.int64)
                grown_ev[:n_notes] = note_ev[:n_notes]
                grown_inst[:n_notes] = note_inst[:n_notes]
                note_ev = grown_ev
                note_inst = grown_inst
            note_ev[n_notes] = t
            note_inst[n_notes] = k
            n_notes += 1
            # instances are scanned oldest first, so a strict comparison
            # keeps the oldest among equal flow ranks
            if fmin < best_flow:
                best_flow = fmin
                best = k
        ncand[t] = count
        if count < 2:
            # only ambiguous events are kept as notes
            n_notes -= count
        if best < 0:
            continue
        owner[t] = best
        for f in range(n_flows):
            v = node[best, f]
            if v >= 0 and succ[f, v, e]:
                node[best, f] = e
                if is_end[f, e]:
                    done[best] = True
            else:
                node[best, f] = -1
    return owner, done[:n_inst], ncand, note_ev[:n_notes], note_inst[:n_notes]


if USE_NUMBA:
    _greedy_jit = numba.njit(cache=True)(_greedy_loop)


def greedy_replay(events, succ, is_end, start_of):
    """Oldest-first instance assignment.

    Returns ``(owner, finished, ncand, note_events, note_instances)`` where
    ``owner[t]`` is the instance that consumed event ``t`` (-1 if none) and
    ``finished[k]`` tells whether instance ``k`` reached an end node.
    """
    args = (
        np.ascontiguousarray(events, dtype=np.int64),
        np.ascontiguousarray(succ, dtype=np.bool_),
        np.ascontiguousarray(is_end, dtype=np.bool_),
        np.ascontiguousarray(start_of, dtype=np.int64),
    )
    if USE_NUMBA:
        return _greedy_jit(*args)
    return _greedy_loop(*args)
