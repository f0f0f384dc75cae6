"""Autoregressive proposal distribution over (length, sentence) pairs.

A single LSTM layer reads tokens left to right and emits logits over the
vocabulary plus an end-of-sentence symbol, so the joint probability of a
sentence factorizes into per-token conditionals times a final end factor.
The same network provides fixed-length continuation densities and ancestral
sampling for the trans-dimensional sampler, and exact gradients for its own
maximum-likelihood updates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .checkpoint import load_tensors, save_tensors
from .corpus import Vocab
from .nn import ParamTensor


@dataclass
class ProposalConfig:
    embed_size: int = 16
    hidden_size: int = 64

    def validate(self) -> None:
        if self.embed_size < 1 or self.hidden_size < 1:
            raise ValueError("proposal sizes must be positive")


class ProposalParams:
    """LSTM parameters; the extra embedding row is the begin-of-sentence
    input and the extra output logit is the end-of-sentence symbol."""

    def __init__(self, config: ProposalConfig, vocab_size: int,
                 rng: np.random.Generator | None = None,
                 dtype=nn.DEFAULT_DTYPE, init_scale: float = 0.1):
        config.validate()
        self.config = config
        self.vocab_size = vocab_size
        self.bos_id = vocab_size
        self.end_id = vocab_size
        if rng is None:
            rng = np.random.default_rng(0)
        d, h = config.embed_size, config.hidden_size

        def u(name, shape):
            return nn.init_uniform(name, shape, rng, scale=init_scale, dtype=dtype)

        self.emb = u("emb", (vocab_size + 1, d))
        self.wx = u("wx", (4 * h, d))
        self.wh = u("wh", (4 * h, h))
        self.b = u("b", (4 * h,))
        self.out_w = u("out_w", (vocab_size + 1, h))
        self.out_b = u("out_b", (vocab_size + 1,))

    def tensors(self) -> list[ParamTensor]:
        return [self.emb, self.wx, self.wh, self.b, self.out_w, self.out_b]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.values for p in self.tensors()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.tensors():
            if p.name not in arrays:
                raise KeyError(f"missing tensor {p.name} in checkpoint")
            p.values[...] = arrays[p.name]

    def zero_grad(self) -> None:
        for p in self.tensors():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.values.size for p in self.tensors())


# --------------------------------------------------------------------------
# LSTM cell
# --------------------------------------------------------------------------

def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _lstm_step(params: ProposalParams, in_ids, h, c):
    """One step for a batch of rows; returns (h', c', cache).

    Gate layout in the stacked weight matrices is [input, forget, output,
    candidate] so the three sigmoid gates share one call.
    """
    hs = params.config.hidden_size
    x = params.emb.values[in_ids]
    pre = (np.einsum("gd,bd->bg", params.wx.values, x)
           + np.einsum("gh,bh->bg", params.wh.values, h)
           + params.b.values[None, :])
    sig = _sigmoid(pre[:, :3 * hs])
    i = sig[:, :hs]
    f = sig[:, hs:2 * hs]
    o = sig[:, 2 * hs:]
    g = np.tanh(pre[:, 3 * hs:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    cache = (in_ids, x, h, c, i, f, g, o, tc)
    return h_new, c_new, cache


def _lstm_step_backward(params: ProposalParams, cache, dh, dc):
    """Backward through one step; accumulates into grads, returns (dh_prev, dc_prev)."""
    in_ids, x, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dpre = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f),
         do * o * (1.0 - o), dg * (1.0 - g * g)], axis=1)
    params.wx.grad += np.einsum("bg,bd->gd", dpre, x)
    params.wh.grad += np.einsum("bg,bh->gh", dpre, h_prev)
    params.b.grad += dpre.sum(axis=0)
    dx = np.einsum("bg,gd->bd", dpre, params.wx.values)
    np.add.at(params.emb.grad, in_ids, dx)
    dh_prev = np.einsum("bg,gh->bh", dpre, params.wh.values)
    return dh_prev, dc_prev


def initial_state(params: ProposalParams, batch: int = 1):
    """State after consuming the begin symbol; next_log_probs gives the
    distribution of the first token."""
    hs = params.config.hidden_size
    h = np.zeros((batch, hs), dtype=params.emb.values.dtype)
    c = np.zeros_like(h)
    ids = np.full(batch, params.bos_id, dtype=np.int64)
    h, c, _ = _lstm_step(params, ids, h, c)
    return h, c


def advance(params: ProposalParams, h, c, tokens):
    """Consume tokens (B, T) or (T,) as inputs; returns the new state."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = np.broadcast_to(tokens[None, :], (h.shape[0], tokens.shape[0]))
    for t in range(tokens.shape[1]):
        h, c, _ = _lstm_step(params, tokens[:, t], h, c)
    return h, c


def next_log_probs(params: ProposalParams, h) -> np.ndarray:
    """Log conditional distribution over vocabulary + end symbol, (B, V+1).

    Ticks the vocabulary-normalization counter: this is a softmax over the
    full output alphabet.
    """
    logits = np.einsum("vh,bh->bv", params.out_w.values, h) + params.out_b.values[None, :]
    nn.count_vocab_normalizations(h.shape[0])
    m = logits.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True)) + m
    return logits - lse


# --------------------------------------------------------------------------
# joint and conditional log-probabilities
# --------------------------------------------------------------------------

def sequence_logprob(x, params: ProposalParams) -> float:
    """Joint log probability of a sentence: per-token conditionals plus the
    end-of-sentence factor."""
    return float(sequence_logprob_batch([x], params)[0])


def sequence_logprob_batch(seqs, params: ProposalParams) -> np.ndarray:
    out = np.empty(len(seqs), dtype=np.float64)
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        if len(s) < 1:
            raise ValueError("proposal sequences must have length >= 1")
        groups.setdefault(len(s), []).append(i)
    for l, idxs in groups.items():
        ids = np.stack([np.asarray(seqs[i], dtype=np.int64) for i in idxs])
        b = len(idxs)
        h, c = initial_state(params, b)
        total = np.zeros(b, dtype=np.float64)
        for t in range(l + 1):
            lp = next_log_probs(params, h)
            target = ids[:, t] if t < l else np.full(b, params.end_id, dtype=np.int64)
            total += lp[np.arange(b), target]
            if t < l:
                h, c, _ = _lstm_step(params, ids[:, t], h, c)
        out[idxs] = total
    return out


def continuation_logprob(tokens, prefix, params: ProposalParams,
                         max_len: int | None = None) -> float:
    """Log density of a fixed-length continuation given a prefix: the sum of
    raw per-token conditionals, with no end-of-sentence factor."""
    tokens = np.asarray(tokens, dtype=np.int64)
    prefix = np.asarray(prefix, dtype=np.int64)
    if max_len is not None and len(prefix) + len(tokens) > max_len:
        raise ValueError("prefix plus continuation exceeds maximum length")
    if tokens.size == 0:
        return 0.0
    h, c = initial_state(params, 1)
    if prefix.size:
        h, c = advance(params, h, c, prefix[None, :])
    total = 0.0
    for t in range(tokens.size):
        lp = next_log_probs(params, h)
        total += float(lp[0, tokens[t]])
        h, c, _ = _lstm_step(params, tokens[t:t + 1], h, c)
    return total


def sample_block(params: ProposalParams, h, c, n: int, rng: np.random.Generator,
                 forced=None):
    """Ancestrally sample n-token continuations for every state row.

    Tokens are drawn from the full conditional including the end symbol; a
    row that draws the end symbol is marked dead (its density over length-n
    continuations is spent) and padded with token 0 from there on.  When
    ``forced`` is given, the last row is teacher-forced to those tokens and
    scored instead of sampled.

    Returns (tokens (B, n), logp (B,), alive (B,), h, c).
    """
    b = h.shape[0]
    n_sample = b - 1 if forced is not None else b
    tokens = np.zeros((b, n), dtype=np.int64)
    logp = np.zeros(b, dtype=np.float64)
    alive = np.ones(b, dtype=bool)
    for t in range(n):
        lp = next_log_probs(params, h)
        taken = np.zeros(b, dtype=np.int64)
        if n_sample:
            probs = np.exp(lp[:n_sample])
            cum = np.cumsum(probs, axis=1)
            u = rng.random(n_sample) * cum[:, -1]
            taken[:n_sample] = np.minimum(
                (cum <= u[:, None]).sum(axis=1), params.vocab_size)
        if forced is not None:
            taken[-1] = forced[t]
        drew_end = taken == params.end_id
        if forced is not None:
            drew_end[-1] = False
        logp = np.where(alive, logp + lp[np.arange(b), taken], logp)
        alive = alive & ~drew_end
        taken = np.where(alive, taken, 0)
        tokens[:, t] = taken
        h, c, _ = _lstm_step(params, taken, h, c)
    logp[~alive] = -np.inf
    return tokens, logp, alive, h, c


def sample_continuation(prefix, n: int, params: ProposalParams,
                        rng: np.random.Generator, max_len: int | None = None):
    """Sample an n-token continuation of the prefix.

    Returns (tokens, logp); tokens is None when the end symbol was drawn
    before n tokens were produced (the proposal is abandoned).  The returned
    logp of a successful draw equals continuation_logprob of the tokens.
    """
    prefix = np.asarray(prefix, dtype=np.int64)
    if max_len is not None and len(prefix) + n > max_len:
        raise ValueError("prefix plus continuation exceeds maximum length")
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    h, c = initial_state(params, 1)
    if prefix.size:
        h, c = advance(params, h, c, prefix[None, :])
    tokens, logp, alive, _, _ = sample_block(params, h, c, n, rng)
    if not alive[0]:
        return None, float("-inf")
    return tokens[0], float(logp[0])


# --------------------------------------------------------------------------
# gradients and the maximum-likelihood update
# --------------------------------------------------------------------------

def sequence_grad(seqs, weights, params: ProposalParams) -> float:
    """Accumulate sum_i weights[i] * d(log q(seq_i))/d(params) into grads.

    Sequences are grouped by length and each group is backpropagated as one
    batch.  Returns the weighted log-probability total (useful for checks).
    """
    weights = np.asarray(weights, dtype=np.float64)
    total = 0.0
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        groups.setdefault(len(s), []).append(i)
    hs = params.config.hidden_size
    for l, idxs in groups.items():
        ids = np.stack([np.asarray(seqs[i], dtype=np.int64) for i in idxs])
        w = weights[idxs]
        b = len(idxs)
        h = np.zeros((b, hs), dtype=params.emb.values.dtype)
        c = np.zeros_like(h)
        caches = []
        hs_list = []
        probs_list = []
        targets = []
        in_ids = np.full(b, params.bos_id, dtype=np.int64)
        for t in range(l + 1):
            h, c, cache = _lstm_step(params, in_ids, h, c)
            caches.append(cache)
            lp = next_log_probs(params, h)
            target = ids[:, t] if t < l else np.full(b, params.end_id, dtype=np.int64)
            total += float(np.dot(w, lp[np.arange(b), target]))
            hs_list.append(h)
            probs_list.append(np.exp(lp))
            targets.append(target)
            if t < l:
                in_ids = ids[:, t]
        dh = np.zeros_like(h)
        dc = np.zeros_like(c)
        for t in range(l, -1, -1):
            dlogits = -probs_list[t]
            dlogits[np.arange(b), targets[t]] += 1.0
            dlogits *= w[:, None]
            params.out_w.grad += np.einsum("bv,bh->vh", dlogits, hs_list[t])
            params.out_b.grad += dlogits.sum(axis=0)
            dh = dh + np.einsum("bv,vh->bh", dlogits, params.out_w.values)
            dh, dc = _lstm_step_backward(params, caches[t], dh, dc)
    return total


def update_proposal(batch, params: ProposalParams, lr: float,
                    clip_norm: float = 5.0) -> float:
    """Plain gradient ascent on the summed log-likelihood of the batch,
    with global-norm clipping.  Returns the pre-clip gradient norm."""
    if not batch:
        return 0.0
    params.zero_grad()
    sequence_grad(batch, np.ones(len(batch)), params)
    grads = [p.grad for p in params.tensors()]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise nn.GradientError("non-finite proposal gradient")
    norm = nn.clip_global_norm(grads, clip_norm)
    for p in params.tensors():
        p.values += lr * p.grad
    return norm


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def save_proposal(path, params: ProposalParams, vocab: Vocab) -> None:
    arrays = {f"mu/{k}": v for k, v in params.named_arrays().items()}
    arrays["vocab"] = np.array(vocab.id_to_token)
    meta = {
        "kind": "proposal",
        "vocab_size": params.vocab_size,
        "config": {
            "embed_size": params.config.embed_size,
            "hidden_size": params.config.hidden_size,
        },
    }
    save_tensors(path, arrays, meta)


def load_proposal(path) -> tuple[ProposalParams, Vocab]:
    arrays, meta = load_tensors(path)
    if meta.get("kind") != "proposal":
        raise ValueError(f"not a proposal checkpoint: {path}")
    params = ProposalParams(ProposalConfig(**meta["config"]), meta["vocab_size"])
    params.load_arrays({k.split("/", 1)[1]: v for k, v in arrays.items()
                        if k.startswith("mu/")})
    vocab = Vocab(id_to_token=[str(t) for t in arrays["vocab"]])
    return params, vocab
