"""Deep convolutional sentence potential.

The potential of a sentence is a scalar computed from word embeddings by a
projection layer, a bank of half convolutions with widths 1..K followed by a
width-2 max-pool over time, a stack of width-preserving convolution layers
combined through weighted skip connections, and a linear readout summed over
time.  Forward returns a cache from which the exact parameter gradient is
obtained by backpropagation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ParamTensor


@dataclass
class PotentialConfig:
    embed_size: int = 32
    proj_size: int = 16
    max_kernel: int = 4
    filters_per_width: int = 16
    stack_layers: int = 2
    stack_size: int = 16
    stack_width: int = 3
    pool_width: int = 2  # 2 = width-2 stride-1 max-pool; 1 disables pooling

    def validate(self) -> None:
        if min(self.embed_size, self.proj_size, self.max_kernel,
               self.filters_per_width, self.stack_size, self.stack_width) < 1:
            raise ValueError("potential sizes must be positive")
        if self.stack_layers < 0:
            raise ValueError("stack_layers must be nonnegative")
        if self.stack_size > self.filters_per_width * self.max_kernel:
            raise ValueError("stack_size must not exceed the bank output size")
        if self.pool_width not in (1, 2):
            raise ValueError("pool_width must be 1 or 2")


class PotentialParams:
    """All parameters of the potential network, as named ParamTensors."""

    def __init__(self, config: PotentialConfig, vocab_size: int,
                 rng: np.random.Generator | None = None,
                 dtype=nn.DEFAULT_DTYPE, init_scale: float = 0.1):
        config.validate()
        if vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        self.config = config
        self.vocab_size = vocab_size
        if rng is None:
            rng = np.random.default_rng(0)
        c = config
        bank_out = c.filters_per_width * c.max_kernel

        def u(name, shape):
            return nn.init_uniform(name, shape, rng, scale=init_scale, dtype=dtype)

        self.emb = u("emb", (vocab_size, c.embed_size))
        self.proj_w = u("proj_w", (c.proj_size, c.embed_size))
        self.proj_b = u("proj_b", (c.proj_size,))
        self.bank = [u(f"bank_k{k}", (c.filters_per_width, c.proj_size, k))
                     for k in range(1, c.max_kernel + 1)]
        self.stack: list[ParamTensor] = []
        if c.stack_layers == 0:
            self.stack.append(u("stack_1", (c.stack_size, bank_out, 1)))
            self.skip = None
        else:
            in_c = bank_out
            for j in range(1, c.stack_layers + 1):
                self.stack.append(u(f"stack_{j}", (c.stack_size, in_c, c.stack_width)))
                in_c = c.stack_size
            self.skip = u("skip", (c.stack_layers, c.stack_size))
        self.readout_w = u("readout_w", (c.stack_size,))
        self.readout_c = u("readout_c", (1,))

    def tensors(self) -> list[ParamTensor]:
        out = [self.emb, self.proj_w, self.proj_b, *self.bank, *self.stack]
        if self.skip is not None:
            out.append(self.skip)
        out += [self.readout_w, self.readout_c]
        return out

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.values for p in self.tensors()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.tensors():
            if p.name not in arrays:
                raise KeyError(f"missing tensor {p.name} in checkpoint")
            if arrays[p.name].shape != p.values.shape:
                raise ValueError(f"shape mismatch for {p.name}")
            p.values[...] = arrays[p.name]

    def zero_grad(self) -> None:
        for p in self.tensors():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.values.size for p in self.tensors())


def potential_forward(ids, params: PotentialParams):
    """Potential value(s) for ids (l,) -> float or (B, l) -> (B,), plus cache."""
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if ids.shape[-1] < 1:
        raise ValueError("sentence length must be at least 1")
    batch_ids = ids[None] if single else ids

    e, e_cache = nn.embed_forward(batch_ids, params.emb)
    y, p_cache = nn.affine_relu_forward(e, params.proj_w, params.proj_b)

    bank_outs = []
    bank_caches = []
    for filt in params.bank:
        o, c = nn.halfconv_forward(y, filt)
        bank_outs.append(o)
        bank_caches.append(c)
    bank = np.concatenate(bank_outs, axis=1)

    if params.config.pool_width == 2:
        pooled, pool_cache = nn.maxpool_time_forward(bank)
    else:
        pooled, pool_cache = bank, None

    stack_outs = []
    stack_caches = []
    cur = pooled
    for filt in params.stack:
        cur, c = nn.halfconv_forward(cur, filt)
        stack_outs.append(cur)
        stack_caches.append(c)

    if params.skip is None:
        ys = stack_outs[0]
        skip_pre = None
    else:
        skip_pre = params.skip.values[0][None, :, None] * stack_outs[0]
        for j in range(1, len(stack_outs)):
            skip_pre = skip_pre + params.skip.values[j][None, :, None] * stack_outs[j]
        ys = np.maximum(skip_pre, 0.0)

    values = np.einsum("d,bdl->b", params.readout_w.values, ys) \
        + params.readout_c.values[0]

    cache = {
        "params": params,
        "single": single,
        "e_cache": e_cache,
        "p_cache": p_cache,
        "bank_caches": bank_caches,
        "bank_widths": [f.values.shape[0] for f in params.bank],
        "pool_cache": pool_cache,
        "stack_caches": stack_caches,
        "stack_outs": stack_outs,
        "skip_pre": skip_pre,
        "ys": ys,
    }
    return (float(values[0]) if single else values), cache


def kink_margin(cache) -> float:
    """Smallest distance of any ReLU pre-activation (or pool comparison)
    from its kink; gradient checks reject instances with tiny margins."""
    vals = [float(np.abs(cache["p_cache"][3]).min())]
    for c in cache["bank_caches"]:
        vals.append(float(np.abs(c[2]).min()))
    if cache["pool_cache"] is not None:
        vals.append(float(np.abs(cache["pool_cache"][0]).min()))
    for c in cache["stack_caches"]:
        vals.append(float(np.abs(c[2]).min()))
    if cache["skip_pre"] is not None:
        vals.append(float(np.abs(cache["skip_pre"]).min()))
    return min(vals)


def potential_backward(cache, upstream) -> None:
    """Accumulate upstream * d(potential)/d(params) into parameter grads.

    ``upstream`` is a scalar for a single sentence or a (B,) vector of
    per-sentence weights for a batched forward.
    """
    params: PotentialParams = cache["params"]
    ys = cache["ys"]
    up = np.asarray(upstream, dtype=ys.dtype)
    if cache["single"]:
        up = up.reshape(1)
    b = ys.shape[0]
    if up.shape != (b,):
        raise ValueError("upstream weights do not match the forward batch")

    params.readout_c.grad[0] += up.sum()
    params.readout_w.grad += np.einsum("b,bdl->d", up, ys)
    g_ys = up[:, None, None] * params.readout_w.values[None, :, None]
    g_ys = np.broadcast_to(g_ys, ys.shape).copy()

    stack_outs = cache["stack_outs"]
    if params.skip is None:
        g_stack = [g_ys]
    else:
        g_pre = np.where(cache["skip_pre"] > 0.0, g_ys, 0.0)
        for j, so in enumerate(stack_outs):
            params.skip.grad[j] += np.einsum("bdl,bdl->d", g_pre, so)
        g_stack = [g_pre * params.skip.values[j][None, :, None]
                   for j in range(len(stack_outs))]

    # stack layers feed forward, so gradients flow back through the chain
    # and each skip branch adds its own contribution
    g_cur = np.zeros_like(g_stack[-1])
    for j in range(len(params.stack) - 1, -1, -1):
        g_cur = g_cur + g_stack[j] if params.skip is not None else g_stack[j]
        g_cur = nn.halfconv_backward(cache["stack_caches"][j], g_cur)

    if cache["pool_cache"] is not None:
        g_bank = nn.maxpool_time_backward(cache["pool_cache"], g_cur)
    else:
        g_bank = g_cur

    g_y = None
    offset = 0
    for c_bank, width in zip(cache["bank_caches"], cache["bank_widths"]):
        g_slice = g_bank[:, offset:offset + width, :]
        gy = nn.halfconv_backward(c_bank, g_slice)
        g_y = gy if g_y is None else g_y + gy
        offset += width

    g_e = nn.affine_relu_backward(cache["p_cache"], g_y)
    nn.embed_backward(cache["e_cache"], g_e)


def potential_value(ids, params: PotentialParams):
    """Forward value(s) without keeping the cache."""
    value, _ = potential_forward(ids, params)
    return value


def potential_batch(seqs, params: PotentialParams) -> np.ndarray:
    """Potential values for a list of sentences (arbitrary lengths).

    Sentences are grouped by length and evaluated in batches; the result is
    elementwise identical to a per-sentence loop.
    """
    if len(seqs) == 0:
        raise ValueError("potential_batch needs at least one sentence")
    out = np.empty(len(seqs), dtype=np.float64)
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        groups.setdefault(len(s), []).append(i)
    for l, idxs in groups.items():
        ids = np.stack([np.asarray(seqs[i], dtype=np.int64) for i in idxs])
        values, _ = potential_forward(ids, params)
        out[idxs] = values
    return out


def batch_forward_backward(seqs, weights, params: PotentialParams) -> np.ndarray:
    """Accumulate sum_i weights[i] * d(potential_i)/d(params); returns values.

    Groups by length so each group runs one batched forward/backward pass.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if len(seqs) != weights.size:
        raise ValueError("one weight per sentence required")
    out = np.empty(len(seqs), dtype=np.float64)
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        groups.setdefault(len(s), []).append(i)
    for l, idxs in groups.items():
        ids = np.stack([np.asarray(seqs[i], dtype=np.int64) for i in idxs])
        values, cache = potential_forward(ids, params)
        potential_backward(cache, weights[idxs])
        out[idxs] = values
    return out


def load_embeddings_text(params: PotentialParams, vocab, path) -> int:
    """Import pretrained embeddings from a text file (token v1 v2 ... per
    line); rows for tokens not in the vocabulary are ignored.  Returns the
    number of replaced rows."""
    d = params.config.embed_size
    replaced = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != d + 1:
                continue
            tok = parts[0]
            if tok in vocab.token_to_id:
                vec = np.array([float(v) for v in parts[1:]],
                               dtype=params.emb.values.dtype)
                params.emb.values[vocab.token_to_id[tok]] = vec
                replaced += 1
    return replaced
