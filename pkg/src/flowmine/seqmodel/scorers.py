"""Trainable successor scorers sharing one interface.

A scorer maps ``(context, position)`` to a probability distribution over
the vocabulary at ``position``; the token already at that position is
ignored (it is treated as masked).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Protocol, Sequence

import numpy as np

from ..core import Catalog, Trace, causality_slice
from ..errors import EmptyCorpus, NonFiniteLoss
from . import transformer as tf
from .vocab import PAD, Vocab

log = logging.getLogger(__name__)


class Scorer(Protocol):
    vocab: Vocab

    def score(self, context: Sequence[int], position: int) -> np.ndarray: ...

    def score_windows(self, tokens: np.ndarray, positions: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    heads: int = 4
    dim: int = 64
    window: int = 64
    mask_prob: float = 0.15
    epochs: int = 10
    learning_rate: float = 1e-3
    seed: int = 0
    batch_size: int = 32
    # causality slicing of the corpus before chunking; 0 disables it
    slice_window: int = 16
    predicate: str = "union"

    def __post_init__(self):
        if min(self.layers, self.heads, self.dim, self.window, self.epochs,
               self.batch_size) < 1:
            raise ValueError("layers, heads, dim, window, epochs and batch_size must be positive")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if not 0.0 < self.mask_prob < 1.0:
            raise ValueError("mask_prob must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


class AttentionScorer:
    kind = "attention"

    def __init__(self, config: ModelConfig, vocab: Vocab, params: dict, history=()):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.history = list(history)

    def score_windows(self, tokens, positions):
        tokens = np.array(tokens, dtype=np.int64, copy=True)
        rows = np.arange(tokens.shape[0])
        tokens[rows, positions] = self.vocab.mask
        out = np.empty((tokens.shape[0], len(self.vocab)))
        for lo in range(0, tokens.shape[0], 256):
            chunk = tokens[lo:lo + 256]
            logits, _ = tf.forward(self.params, chunk, self.config.heads)
            sel = logits[np.arange(chunk.shape[0]), positions[lo:lo + 256]]
            out[lo:lo + 256] = tf.softmax(sel)
        return out

    def score(self, context, position):
        toks, pos = _encode_context(self.vocab, context, position, self.config.window)
        return self.score_windows(toks[None, :], np.array([pos]))[0]


class NGramScorer:
    """Additively smoothed successor frequencies (order 2 or 3)."""

    kind = "ngram"

    def __init__(self, vocab: Vocab, order: int, smoothing: float,
                 bigrams: np.ndarray, trigrams: np.ndarray | None = None):
        self.vocab = vocab
        self.order = order
        self.smoothing = float(smoothing)
        self.bigrams = bigrams
        self.trigrams = trigrams

    def _dist(self, prev2, prev1):
        k = self.smoothing
        V = len(self.vocab)
        if self.order == 3 and prev2 > 0 and prev2 != self.vocab.mask:
            row = self.trigrams[prev2, prev1].astype(np.float64)
            if row.sum() > 0 or k > 0:
                return (row + k) / (row.sum() + k * V)
        row = self.bigrams[prev1].astype(np.float64)
        total = row.sum()
        if total + k * V == 0:
            return np.full(V, 1.0 / V)
        return (row + k) / (total + k * V)

    def score_windows(self, tokens, positions):
        out = np.empty((tokens.shape[0], len(self.vocab)))
        for r, p in enumerate(positions):
            prev1 = tokens[r, p - 1] if p >= 1 else PAD
            prev2 = tokens[r, p - 2] if p >= 2 else PAD
            if prev1 == PAD or prev1 == self.vocab.mask:
                out[r] = np.full(len(self.vocab), 1.0 / len(self.vocab))
            else:
                out[r] = self._dist(prev2, prev1)
        return out

    def score(self, context, position):
        toks, pos = _encode_context(self.vocab, context, position, None)
        return self.score_windows(toks[None, :], np.array([pos]))[0]


def _encode_context(vocab, context, position, window):
    ctx = list(context)
    if not 0 <= position <= len(ctx):
        raise IndexError(position)
    if position == len(ctx):
        ctx.append(None)
    toks = np.array([vocab.mask if (i == position or e is None or e == -1)
                     else vocab.token_of(int(e)) for i, e in enumerate(ctx)],
                    dtype=np.int64)
    if window is not None and toks.shape[0] > window:
        lo = min(max(0, position - window // 2), toks.shape[0] - window)
        toks = toks[lo:lo + window]
        position -= lo
    return toks, position


# ---------------------------------------------------------------------------
# training


def training_slices(traces, catalog, config: ModelConfig) -> list[np.ndarray]:
    vocab = Vocab.from_catalog(catalog)
    out = []
    for t in traces:
        parts = (causality_slice(t, catalog, config.predicate, config.slice_window)
                 if config.slice_window else [t])
        out += [vocab.encode(p.events) for p in parts if len(p) >= 2]
    return out


def scoring_traces(scorer, traces: Sequence[Trace], catalog: Catalog) -> list[Trace]:
    """Traces cut into the causality slices the scorer was trained on."""
    config = getattr(scorer, "config", None)
    if config is None or not config.slice_window:
        return list(traces)
    out = []
    for t in traces:
        out += [p for p in causality_slice(t, catalog, config.predicate, config.slice_window)
                if len(p) >= 2]
    return out


def _chunk(slices, window, rng):
    rows = []
    for s in slices:
        offset = int(rng.integers(0, window)) if len(s) > window else 0
        bounds = [0] + list(range(offset or window, len(s), window)) + [len(s)]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if hi - lo >= 2:
                rows.append(s[lo:hi])
    arr = np.zeros((len(rows), window), dtype=np.int64)
    for i, r in enumerate(rows):
        arr[i, :len(r)] = r
    return arr


def _mask_batch(batch, vocab, mask_prob, rng):
    real = batch != PAD
    chosen = (rng.random(batch.shape) < mask_prob) & real
    # every row predicts at least one token
    for r in np.nonzero(~chosen.any(axis=1))[0]:
        cand = np.nonzero(real[r])[0]
        chosen[r, cand[rng.integers(0, cand.shape[0])]] = True
    targets = np.where(chosen, batch, -1)
    inputs = np.where(chosen, vocab.mask, batch)
    return inputs, targets


def train(traces: Sequence[Trace], catalog: Catalog, config: ModelConfig = ModelConfig(),
          progress=None) -> AttentionScorer:
    """Masked-token training; returns the scorer with per-epoch mean losses."""
    vocab = Vocab.from_catalog(catalog)
    slices = training_slices(traces, catalog, config)
    if not slices:
        raise EmptyCorpus("no slice with at least two events to train on")
    rng = np.random.default_rng(config.seed)
    params = tf.init_params(len(vocab), config.window, config.dim, config.heads,
                            config.layers, rng)
    opt = tf.Adam(params, lr=config.learning_rate)
    history = []
    for epoch in range(1, config.epochs + 1):
        data = _chunk(slices, config.window, rng)
        order = rng.permutation(data.shape[0])
        losses = []
        for lo in range(0, data.shape[0], config.batch_size):
            batch = data[order[lo:lo + config.batch_size]]
            # trim trailing all-PAD columns; positions stay aligned
            width = int((batch != PAD).sum(axis=1).max())
            inputs, targets = _mask_batch(batch[:, :width], vocab, config.mask_prob, rng)
            loss, grads = tf.masked_loss(params, inputs, targets, config.heads)
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise NonFiniteLoss(epoch)
            opt.step(params, grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.info("epoch %d/%d loss %.4f", epoch, config.epochs, history[-1])
        if progress is not None:
            progress(epoch, history[-1])
    return AttentionScorer(config, vocab, params, history)


def train_ngram(traces: Sequence[Trace], catalog: Catalog, order: int = 2,
                smoothing: float = 0.0) -> NGramScorer:
    from .. import _kernels

    if order not in (2, 3):
        raise ValueError("order must be 2 or 3")
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    traces = [t for t in traces if len(t)]
    if not traces:
        raise EmptyCorpus("no events to count")
    vocab = Vocab.from_catalog(catalog)
    V = len(vocab)
    bigrams = np.zeros((V, V), dtype=np.int64)
    trigrams = np.zeros((V, V, V), dtype=np.int64) if order == 3 else None
    for t in traces:
        toks = vocab.encode(t.events)
        bigrams += _kernels.bigram_counts(toks, V)
        if trigrams is not None and toks.shape[0] > 2:
            np.add.at(trigrams, (toks[:-2], toks[1:-1], toks[2:]), 1)
    return NGramScorer(vocab, order, smoothing, bigrams, trigrams)


# ---------------------------------------------------------------------------
# successor queries


def occurrences(traces: Sequence[Trace], msg_id: int) -> list[tuple[int, int]]:
    return [(i, p) for i, t in enumerate(traces) for p, e in enumerate(t.events) if e == msg_id]


def sample_occurrences(traces: Sequence[Trace], m1: int, samples: int = 64, seed: int = 0,
                       occ=None) -> list[tuple[int, int]]:
    """Up to ``samples`` uniformly drawn (trace, position) occurrences of ``m1``."""
    from ..errors import NoOccurrence

    if occ is None:
        occ = occurrences(traces, m1)
    if not occ:
        raise NoOccurrence(m1)
    rng = np.random.default_rng([seed, m1])
    if len(occ) > samples:
        pick = np.sort(rng.choice(len(occ), size=samples, replace=False))
        occ = [occ[i] for i in pick]
    return occ


def successor_distribution(scorer, traces: Sequence[Trace], m1: int, samples: int = 64,
                           seed: int = 0, occ=None, per_occurrence: bool = False) -> np.ndarray:
    """Mean predicted distribution at the slot right after sampled ``m1`` occurrences.

    With ``per_occurrence`` the individual distributions are returned, one row each.
    """
    return _slot_distribution(scorer, traces, sample_occurrences(traces, m1, samples, seed, occ),
                              per_occurrence)


def trace_background(scorer, traces: Sequence[Trace], occ, draws: int = 4,
                     seed: int = 0, per_occurrence: bool = False) -> np.ndarray:
    """Mean predicted distribution at slots drawn uniformly from each occurrence's trace.

    With sliced traces this is the event mix m1 is embedded in, so that
    concurrent instances of the same flow are part of the background.
    """
    rng = np.random.default_rng([seed, 0x626B67])
    slots = []
    for ti, _ in occ:
        q = rng.integers(0, len(traces[ti]), size=draws)
        # _slot_distribution scores the slot after the given position
        slots += [(ti, int(k) - 1) for k in q]
    return _slot_distribution(scorer, traces, slots, per_occurrence)


def _slot_distribution(scorer, traces, occ, rows_out=False):
    window = getattr(getattr(scorer, "config", None), "window", 64)
    vocab = scorer.vocab
    rows = np.zeros((len(occ), window), dtype=np.int64)
    positions = np.empty(len(occ), dtype=np.int64)
    cache = {}
    for r, (ti, p) in enumerate(occ):
        if ti not in cache:
            cache[ti] = np.append(vocab.encode(traces[ti].events), vocab.mask)
        toks = cache[ti]
        slot = p + 1
        n = slot + 1 if slot == toks.shape[0] - 1 else toks.shape[0] - 1
        # window centred on the occurrence, clipped to the trace
        lo = min(max(0, p - window // 2), max(0, n - window))
        seg = toks[lo:min(n, lo + window)]
        rows[r, :seg.shape[0]] = seg
        positions[r] = slot - lo
    dist = scorer.score_windows(rows, positions)
    return dist if rows_out else dist.mean(axis=0)


def next_score(scorer, traces: Sequence[Trace], m1: int, m2: int, samples: int = 64,
               seed: int = 0) -> float:
    """Mean probability that ``m2`` fills the masked slot right after ``m1``."""
    dist = successor_distribution(scorer, traces, m1, samples, seed)
    return float(dist[scorer.vocab.token_of(m2)])


def config_dict(config: ModelConfig) -> dict:
    return asdict(config)
