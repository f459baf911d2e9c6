import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmine.core import Catalog, Message, Trace
from flowmine.errors import CorruptFile, EmptyCorpus, NoOccurrence, VersionMismatch
from flowmine.scenarios import case_catalog, case_flows
from flowmine.seqmodel import (ModelConfig, Vocab, load, next_score, save, train, train_ngram)
from flowmine.seqmodel import transformer as tf
from flowmine.seqmodel.modelfile import dumps, loads
from flowmine.synthgen import GenConfig, generate

TOY = Catalog(tuple(Message(i, f"S{i}", f"D{i}", "x") for i in range(1, 6)))
TOY_CFG = ModelConfig(layers=1, dim=16, heads=2, window=8, epochs=40, learning_rate=1e-2,
                      slice_window=0, mask_prob=0.3)


@pytest.fixture(scope="module")
def toy_scorer():
    # position 1 is decided by the token to its right: 2 before 3, 4 before 5
    traces = [Trace([1, 2, 3])] * 100 + [Trace([1, 4, 5])] * 100
    return train(traces, TOY, TOY_CFG), traces


def test_vocab_layout():
    v = Vocab.from_catalog(case_catalog())
    assert len(v) == 14 + 2
    assert v.mask == 15
    assert [v.id_of(v.token_of(i)) for i in case_catalog().ids] == case_catalog().ids
    with pytest.raises(KeyError):
        v.token_of(3)


@pytest.mark.parametrize("bad", [dict(dim=10, heads=4), dict(mask_prob=0.0), dict(mask_prob=1.0),
                                 dict(epochs=0), dict(learning_rate=0.0), dict(seed=-1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ModelConfig(**bad)


def _grad_check(params, tokens, targets, heads, h=1e-5):
    _, grads = tf.masked_loss(params, tokens, targets, heads)
    worst = {}
    for name, p in params.items():
        num = np.zeros_like(p)
        flat = p.reshape(-1)
        step = h * max(1.0, float(np.abs(p).max()))
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up, _ = tf.masked_loss(params, tokens, targets, heads)
            flat[i] = old - step
            down, _ = tf.masked_loss(params, tokens, targets, heads)
            flat[i] = old
            num.reshape(-1)[i] = (up - down) / (2 * step)
        a = grads[name]
        denom = max(np.linalg.norm(a) + np.linalg.norm(num), 1e-12)
        worst[name] = np.linalg.norm(a - num) / denom
    return worst


def test_gradient_check_every_parameter():
    rng = np.random.default_rng(0)
    params = tf.init_params(7, 4, 8, 2, 1, rng)
    # move away from the symmetric initial point so every path carries gradient
    for p in params.values():
        p += rng.standard_normal(p.shape) * 0.3
    tokens = np.array([[1, 6, 3, 2], [4, 6, 5, 0]])
    targets = np.array([[-1, 2, -1, -1], [-1, 3, 1, -1]])
    worst = _grad_check(params, tokens, targets, heads=2)
    assert set(worst) == set(params)
    bad = {k: v for k, v in worst.items() if not v <= 1e-4}
    assert not bad, bad


def test_zero_output_layer_is_uniform():
    rng = np.random.default_rng(1)
    params = tf.init_params(9, 8, 16, 4, 2, rng)
    params["tok_emb"][:] = 0.0
    params["out_b"][:] = 0.0
    logits, _ = tf.forward(params, np.array([[1, 2, 8, 3]]), 4)
    probs = tf.softmax(logits)
    assert np.allclose(probs, 1.0 / 9, atol=1e-6)


def test_distributions_sum_to_one(toy_scorer):
    sc, _ = toy_scorer
    rng = np.random.default_rng(2)
    toks = rng.integers(0, len(sc.vocab), size=(20, 8))
    toks[:, 0] = 1
    dist = sc.score_windows(toks, rng.integers(0, 8, size=20))
    assert np.all(dist >= 0)
    assert np.allclose(dist.sum(axis=1), 1.0, atol=1e-6)


def test_masked_slot_learned(toy_scorer):
    sc, _ = toy_scorer
    v = sc.vocab
    assert sc.score([1, -1, 3], 1)[v.token_of(2)] >= 0.9


def test_attention_is_bidirectional(toy_scorer):
    sc, _ = toy_scorer
    v = sc.vocab
    # identical left context; only the token after the mask differs
    a = sc.score([1, -1, 3], 1)
    b = sc.score([1, -1, 5], 1)
    assert a[v.token_of(2)] > 0.9 and b[v.token_of(4)] > 0.9
    assert not np.allclose(a, b)


def test_next_score_deterministic_successor(toy_scorer):
    sc, traces = toy_scorer
    assert next_score(sc, traces, 2, 3) >= 0.9


def test_next_score_unrelated_message_is_small():
    traces = [Trace([1, 2])] * 100 + [Trace([3, 4])] * 100
    sc = train(traces, TOY, TOY_CFG)
    assert next_score(sc, traces, 1, 4) < 1.0 / len(sc.vocab) + 0.05


def test_next_score_requires_occurrence(toy_scorer):
    sc, _ = toy_scorer
    with pytest.raises(NoOccurrence):
        next_score(sc, [Trace([1, 2, 3])], 5, 1)


def test_training_is_deterministic():
    traces = [Trace([1, 2, 3])] * 20
    cfg = ModelConfig(layers=1, dim=8, heads=2, window=8, epochs=3, slice_window=0)
    a, b = train(traces, TOY, cfg), train(traces, TOY, cfg)
    assert a.history == b.history
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        train([Trace([1])], TOY, TOY_CFG)
    with pytest.raises(EmptyCorpus):
        train_ngram([Trace([])], TOY)


def test_loss_decreases_on_case_study_corpus():
    trace = generate(GenConfig(tuple(case_flows()), cores=4, runs=600, seed=0))
    sc = train([trace], case_catalog(), ModelConfig(epochs=10, seed=0))
    assert len(sc.history) == 10
    assert sc.history[-1] < sc.history[0]


# -- n-gram scorer -------------------------------------------------------------


def test_ngram_single_successor():
    tr = [Trace([1, 2] * 20)]
    sc = train_ngram(tr, TOY, order=2)
    assert next_score(sc, tr, 1, 2) == 1.0


def test_ngram_balanced_successors():
    tr = [Trace([1, 2, 1, 3] * 10)]
    sc = train_ngram(tr, TOY, order=2)
    assert next_score(sc, tr, 1, 2) == 0.5


def test_ngram_additive_smoothing_formula():
    tr = [Trace([1, 2, 1, 3] * 10)]
    k = 0.5
    sc = train_ngram(tr, TOY, order=2, smoothing=k)
    count_1 = 20
    assert next_score(sc, tr, 1, 4) == pytest.approx(k / (count_1 + k * len(sc.vocab)), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=2, max_size=60))
def test_ngram_reproduces_empirical_frequencies(events):
    sc = train_ngram([Trace(events)], TOY, order=2)
    v = sc.vocab
    for a in set(events[:-1]):
        follow = [b for x, b in zip(events, events[1:]) if x == a]
        dist = sc.score([a, -1], 1)
        for b in range(1, 6):
            assert dist[v.token_of(b)] == pytest.approx(follow.count(b) / len(follow), abs=1e-12)
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)


def test_trigram_uses_two_tokens_of_context():
    tr = [Trace([1, 2, 3, 4, 2, 5] * 10)]
    sc = train_ngram(tr, TOY, order=3)
    v = sc.vocab
    assert sc.score([1, 2, -1], 2)[v.token_of(3)] == 1.0
    assert sc.score([4, 2, -1], 2)[v.token_of(5)] == 1.0


# -- model files -----------------------------------------------------------------


def test_roundtrip_attention(tmp_path, toy_scorer):
    sc, _ = toy_scorer
    save(sc, tmp_path / "m.bin")
    back = load(tmp_path / "m.bin")
    toks = np.array([[1, 6, 3, 0, 0, 0, 0, 0], [1, 4, 6, 0, 0, 0, 0, 0]])
    pos = np.array([1, 2])
    assert np.array_equal(sc.score_windows(toks, pos), back.score_windows(toks, pos))
    assert back.config == sc.config and back.history == sc.history


def test_roundtrip_ngram():
    tr = [Trace([1, 2, 3, 1, 3, 2])]
    sc = train_ngram(tr, TOY, order=3, smoothing=0.1)
    back = loads(dumps(sc))
    for ctx in ([1, -1], [1, 2, -1], [3, -1]):
        assert np.array_equal(sc.score(ctx, len(ctx) - 1), back.score(ctx, len(ctx) - 1))


def test_truncated_file_is_corrupt(toy_scorer):
    data = dumps(toy_scorer[0])
    with pytest.raises(CorruptFile):
        loads(data[:-20])
    with pytest.raises(CorruptFile):
        loads(data[:5])


def test_flipped_byte_is_corrupt(toy_scorer):
    data = bytearray(dumps(toy_scorer[0]))
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(CorruptFile):
        loads(bytes(data))


def test_wrong_magic_is_version_mismatch(toy_scorer):
    data = dumps(toy_scorer[0])
    with pytest.raises(VersionMismatch):
        loads(b"XXXX" + data[4:])
