"""Bidirectional transformer encoder with hand-written backpropagation.

Layout: token + learned position embeddings, ``layers`` pre-norm blocks
(multi-head self-attention, then a GELU feed-forward of width 4*dim), a
final layer norm and an output projection tied to the token embedding.
Attention is unmasked in time; only PAD keys are hidden.
"""
from __future__ import annotations

import math

import numpy as np

from .vocab import PAD

_GELU_C = math.sqrt(2.0 / math.pi)
_NEG = -1e9
_LN_EPS = 1e-5


def init_params(vocab_size, window, dim, heads, layers, rng, dtype=np.float64):
    if dim % heads:
        raise ValueError("dim must be divisible by heads")

    def normal(*shape):
        return (rng.standard_normal(shape) * 0.02).astype(dtype)

    p = {
        "tok_emb": normal(vocab_size, dim),
        "pos_emb": normal(window, dim),
    }
    for i in range(layers):
        pre = f"l{i}."
        p[pre + "ln1_g"] = np.ones(dim, dtype)
        p[pre + "ln1_b"] = np.zeros(dim, dtype)
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = normal(dim, dim)
        # no key bias: it shifts every score of a query equally and has zero gradient
        for name in ("bq", "bv", "bo"):
            p[pre + name] = np.zeros(dim, dtype)
        p[pre + "ln2_g"] = np.ones(dim, dtype)
        p[pre + "ln2_b"] = np.zeros(dim, dtype)
        p[pre + "w1"] = normal(dim, 4 * dim)
        p[pre + "b1"] = np.zeros(4 * dim, dtype)
        p[pre + "w2"] = normal(4 * dim, dim)
        p[pre + "b2"] = np.zeros(dim, dtype)
    p["lnf_g"] = np.ones(dim, dtype)
    p["lnf_b"] = np.zeros(dim, dtype)
    p["out_b"] = np.zeros(vocab_size, dtype)
    return p


def n_layers(params) -> int:
    return sum(1 for k in params if k.endswith(".ln1_g"))


# -- primitives --------------------------------------------------------------


def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu_fwd(x):
    u = _GELU_C * x * (1.0 + 0.044715 * x * x)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_bwd(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


# -- model ---------------------------------------------------------------------


def forward(params, tokens, heads):
    """Logits of shape (batch, time, vocab) and the cache for ``backward``."""
    B, T = tokens.shape
    E = params["tok_emb"]
    d = E.shape[1]
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    key_bias = np.where(tokens == PAD, _NEG, 0.0)[:, None, None, :]
    x = E[tokens] + params["pos_emb"][:T]
    caches = []
    for i in range(n_layers(params)):
        pre = f"l{i}."
        a_in, ln1 = _ln_fwd(x, params[pre + "ln1_g"], params[pre + "ln1_b"])
        q = a_in @ params[pre + "wq"] + params[pre + "bq"]
        k = a_in @ params[pre + "wk"]
        v = a_in @ params[pre + "wv"] + params[pre + "bv"]
        qh = q.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
        att = softmax(qh @ kh.transpose(0, 1, 3, 2) * scale + key_bias)
        oh = att @ vh
        o = oh.transpose(0, 2, 1, 3).reshape(B, T, d)
        x = x + o @ params[pre + "wo"] + params[pre + "bo"]
        f_in, ln2 = _ln_fwd(x, params[pre + "ln2_g"], params[pre + "ln2_b"])
        h1 = f_in @ params[pre + "w1"] + params[pre + "b1"]
        a1, gelu = _gelu_fwd(h1)
        x = x + a1 @ params[pre + "w2"] + params[pre + "b2"]
        caches.append((a_in, ln1, qh, kh, vh, att, o, f_in, ln2, a1, gelu))
    hf, lnf = _ln_fwd(x, params["lnf_g"], params["lnf_b"])
    logits = hf @ E.T + params["out_b"]
    return logits, (tokens, heads, caches, hf, lnf)


def backward(params, cache, dlogits):
    tokens, heads, caches, hf, lnf = cache
    B, T = tokens.shape
    E = params["tok_emb"]
    d = E.shape[1]
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    V = E.shape[0]
    grads["out_b"] = dlogits.reshape(-1, V).sum(0)
    grads["tok_emb"] += dlogits.reshape(-1, V).T @ hf.reshape(-1, d)
    dhf = dlogits @ E
    dx, grads["lnf_g"], grads["lnf_b"] = _ln_bwd(dhf, lnf)
    for i in reversed(range(n_layers(params))):
        pre = f"l{i}."
        a_in, ln1, qh, kh, vh, att, o, f_in, ln2, a1, gelu = caches[i]
        # feed-forward branch
        grads[pre + "b2"] = dx.reshape(-1, d).sum(0)
        grads[pre + "w2"] = a1.reshape(-1, 4 * d).T @ dx.reshape(-1, d)
        da1 = dx @ params[pre + "w2"].T
        dh1 = _gelu_bwd(da1, gelu)
        grads[pre + "b1"] = dh1.reshape(-1, 4 * d).sum(0)
        grads[pre + "w1"] = f_in.reshape(-1, d).T @ dh1.reshape(-1, 4 * d)
        df_in = dh1 @ params[pre + "w1"].T
        dxf, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = _ln_bwd(df_in, ln2)
        dx = dx + dxf
        # attention branch
        grads[pre + "bo"] = dx.reshape(-1, d).sum(0)
        grads[pre + "wo"] = o.reshape(-1, d).T @ dx.reshape(-1, d)
        do = dx @ params[pre + "wo"].T
        doh = do.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
        datt = doh @ vh.transpose(0, 1, 3, 2)
        dvh = att.transpose(0, 1, 3, 2) @ doh
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
        dqh = ds @ kh
        dkh = ds.transpose(0, 1, 3, 2) @ qh
        dq = dqh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(B, T, d)
        flat = a_in.reshape(-1, d)
        da_in = np.zeros_like(a_in)
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            grads[pre + "w" + name] = flat.T @ dproj.reshape(-1, d)
            if name != "k":
                grads[pre + "b" + name] = dproj.reshape(-1, d).sum(0)
            da_in += dproj @ params[pre + "w" + name].T
        dxa, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = _ln_bwd(da_in, ln1)
        dx = dx + dxa
    grads["pos_emb"][:T] = dx.sum(0)
    np.add.at(grads["tok_emb"], tokens, dx)
    return grads


def masked_loss(params, tokens, targets, heads):
    """Mean cross-entropy over positions where ``targets >= 0``.

    Returns ``(loss, grads)``.
    """
    logits, cache = forward(params, tokens, heads)
    sel = targets >= 0
    count = int(sel.sum())
    if count == 0:
        return 0.0, {k: np.zeros_like(v) for k, v in params.items()}
    probs = softmax(logits)
    picked = probs[sel, targets[sel]]
    # a zero probability means divergence; the caller checks for a non-finite loss
    with np.errstate(divide="ignore"):
        loss = float(-np.log(picked).sum() / count)
    dlogits = np.zeros_like(logits)
    dlogits[sel] = probs[sel]
    dlogits[sel, targets[sel]] -= 1.0
    dlogits /= count
    return loss, backward(params, cache, dlogits)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
