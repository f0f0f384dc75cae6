"""Minimal differentiable kernels: parameter tensors, layer ops with exact
reverse-mode gradients, the Adam optimizer, and a finite-difference oracle.

All forward ops accept either a single sequence (no batch axis) or a batch
(leading axis B).  Backward functions accumulate into ``ParamTensor.grad``
and return the gradient with respect to the layer input.
"""
from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float64

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class GradientError(RuntimeError):
    """Raised when a gradient or update turns non-finite."""


# --------------------------------------------------------------------------
# instrumentation: vocabulary-sized normalizations
#
# Sentence scoring through the random-field model must never normalize over
# the vocabulary; the counter below is ticked by every op that does (the
# exact length-1 partition sum and the proposal's output softmax), so tests
# can assert the softmax-free property structurally.
# --------------------------------------------------------------------------

_vocab_normalizations = 0


def count_vocab_normalizations(n: int = 1) -> None:
    global _vocab_normalizations
    _vocab_normalizations += n


def vocab_normalization_count() -> int:
    return _vocab_normalizations


def reset_vocab_normalization_count() -> None:
    global _vocab_normalizations
    _vocab_normalizations = 0


class ParamTensor:
    """A named parameter array with a same-shape gradient accumulator."""

    __slots__ = ("name", "values", "grad")

    def __init__(self, name: str, values: np.ndarray):
        self.name = name
        self.values = np.ascontiguousarray(values)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"ParamTensor({self.name!r}, shape={self.values.shape})"


def init_uniform(name, shape, rng, scale=0.1, dtype=DEFAULT_DTYPE) -> ParamTensor:
    """Uniform init in [-scale, scale], the default for every parameter."""
    values = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return ParamTensor(name, values)


def logsumexp(a, axis=None):
    """Max-shifted log-sum-exp; handles -inf entries."""
    a = np.asarray(a, dtype=np.float64)
    if axis is None:
        m = float(a.max())
        if m == -np.inf or np.isnan(m):
            return m
        return m + float(np.log(np.exp(a - m).sum()))
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _batched(y):
    """Return (array with batch axis, had_batch flag)."""
    y = np.asarray(y)
    if y.ndim == 2:
        return y[None], False
    return y, True


# --------------------------------------------------------------------------
# embedding lookup
# --------------------------------------------------------------------------

def embed_forward(ids, emb: ParamTensor):
    """Map token ids to embedding columns.

    ids: (l,) or (B, l) integer array; emb: (V, d).
    Returns (B, d, l) (or (d, l) when unbatched) and a cache for backward.
    """
    ids = np.asarray(ids)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
    if ids.size and (ids.min() < 0 or ids.max() >= emb.values.shape[0]):
        raise IndexError("token id out of embedding range")
    out = emb.values[ids].transpose(0, 2, 1)
    cache = (ids, emb, single)
    return (out[0] if single else out), cache


def embed_backward(cache, grad_out) -> None:
    ids, emb, single = cache
    g = np.asarray(grad_out)
    if single:
        g = g[None]
    np.add.at(emb.grad, ids, g.transpose(0, 2, 1))


# --------------------------------------------------------------------------
# affine + ReLU projection, applied column-wise
# --------------------------------------------------------------------------

def affine_relu_forward(y, w: ParamTensor, b: ParamTensor):
    """Per column: max(W y + b, 0).  y: (B, d_in, l) or (d_in, l)."""
    yb, had_batch = _batched(y)
    if w.values.shape[1] != yb.shape[1]:
        raise ValueError(
            f"affine shape mismatch: W is {w.values.shape}, input has {yb.shape[1]} rows"
        )
    pre = np.einsum("oi,bil->bol", w.values, yb) + b.values[None, :, None]
    out = np.maximum(pre, 0.0)
    cache = (yb, w, b, pre, had_batch)
    return (out if had_batch else out[0]), cache


def affine_relu_backward(cache, grad_out):
    yb, w, b, pre, had_batch = cache
    g = np.asarray(grad_out)
    if not had_batch:
        g = g[None]
    g = g * (pre > 0.0)
    w.grad += np.einsum("bol,bil->oi", g, yb)
    b.grad += g.sum(axis=(0, 2))
    gy = np.einsum("oi,bol->bil", w.values, g)
    return gy if had_batch else gy[0]


# --------------------------------------------------------------------------
# half convolution: k-1 total zero padding so output length equals input
# length; ceil((k-1)/2) columns before, floor((k-1)/2) after.
# --------------------------------------------------------------------------

def _half_pad(k: int) -> tuple[int, int]:
    return (k - 1 + 1) // 2, (k - 1) // 2


def halfconv_forward(y, filt: ParamTensor):
    """ReLU half convolution.

    y: (B, d, l) or (d, l); filt: (C, d, k) or (d, k) for a single filter.
    Output: (B, C, l); a single (d, k) filter on an unbatched input gives (l,).
    """
    yb, had_batch = _batched(y)
    f = filt.values
    single_filter = f.ndim == 2
    if single_filter:
        f = f[None]
    c, d, k = f.shape
    if d != yb.shape[1]:
        raise ValueError("filter channel count does not match input")
    before, after = _half_pad(k)
    if k == 1:
        yp = yb
        pre = np.einsum("cd,bdl->bcl", f[:, :, 0], yb)
    else:
        b, _, l = yb.shape
        yp = np.zeros((b, d, l + k - 1), dtype=yb.dtype)
        yp[:, :, before:before + l] = yb
        pre = np.einsum("cd,bdl->bcl", f[:, :, 0], yp[:, :, :l])
        for j in range(1, k):
            pre += np.einsum("cd,bdl->bcl", f[:, :, j], yp[:, :, j:j + l])
    out = np.maximum(pre, 0.0)
    cache = (yp, filt, pre, k, before, after, had_batch, single_filter)
    if not had_batch:
        out = out[0]
        if single_filter:
            out = out[0]
    return out, cache


def halfconv_backward(cache, grad_out):
    yp, filt, pre, k, before, after, had_batch, single_filter = cache
    f = filt.values
    if single_filter:
        f = f[None]
    g = np.asarray(grad_out)
    if not had_batch:
        if single_filter:
            g = g[None]
        g = g[None]
    g = g * (pre > 0.0)
    if k == 1:
        gf = np.einsum("bcl,bdl->cd", g, yp)[:, :, None]
        gy = np.einsum("bcl,cd->bdl", g, f[:, :, 0])
    else:
        l = g.shape[2]
        gf = np.empty_like(f)
        gyp = np.zeros_like(yp)
        for j in range(k):
            gf[:, :, j] = np.einsum("bcl,bdl->cd", g, yp[:, :, j:j + l])
            gyp[:, :, j:j + l] += np.einsum("bcl,cd->bdl", g, f[:, :, j])
        end = gyp.shape[2] - after
        gy = gyp[:, :, before:end]
    filt.grad += gf[0] if single_filter else gf
    return gy if had_batch else gy[0]


# --------------------------------------------------------------------------
# max-pool over time, width 2 stride 1, one zero column padded at the left
# so the time dimension is preserved
# --------------------------------------------------------------------------

def maxpool_time_forward(y):
    yb, had_batch = _batched(y)
    b, d, l = yb.shape
    yp = np.zeros((b, d, l + 1), dtype=yb.dtype)
    yp[:, :, 1:] = yb
    left = yp[:, :, :-1]
    right = yp[:, :, 1:]
    diff = left - right
    out = np.where(diff >= 0, left, right)
    cache = (diff, yb.shape, had_batch)
    return (out if had_batch else out[0]), cache


def maxpool_time_backward(cache, grad_out):
    diff, shape, had_batch = cache
    take_left = diff >= 0
    g = np.asarray(grad_out)
    if not had_batch:
        g = g[None]
    gyp = np.zeros((shape[0], shape[1], shape[2] + 1), dtype=g.dtype)
    gyp[:, :, :-1] += np.where(take_left, g, 0.0)
    gyp[:, :, 1:] += np.where(take_left, 0.0, g)
    gy = gyp[:, :, 1:]
    return gy if had_batch else gy[0]


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

class Adam:
    """Adam with bias correction over a fixed list of ParamTensors.

    ``step`` applies the standard descent update from the accumulated
    ``grad`` fields; callers maximizing an objective accumulate the negated
    gradient.  Non-finite gradients raise before any state is mutated, so a
    failed iteration leaves parameters and moments untouched.
    """

    def __init__(self, tensors, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.tensors = list(tensors)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.tensors]
        self.v = [np.zeros_like(p.values) for p in self.tensors]

    def step(self, lr: float) -> None:
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        for p in self.tensors:
            if not np.all(np.isfinite(p.grad)):
                raise GradientError(f"non-finite gradient in {p.name}")
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.tensors):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            p.values -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(adam: Adam, lr: float) -> None:
    """Functional alias for one optimizer step."""
    adam.step(lr)


# --------------------------------------------------------------------------
# finite-difference oracle
# --------------------------------------------------------------------------

def finite_diff_grad(f, tensors, eps: float = 1e-6):
    """Central differences (f(x+eps) - f(x-eps)) / 2eps per coordinate.

    ``f`` is a zero-argument callable evaluating the scalar objective at the
    tensors' current values.  Returns one gradient array per tensor.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads = []
    for p in tensors:
        g = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise GradientError("non-finite evaluation in finite differences")
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Max elementwise relative error, denominator floored at the absolute
    resolution of central differences so near-zero coordinates compare at
    the finite-difference noise floor rather than blowing up."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def clip_global_norm(arrays, max_norm: float) -> float:
    """Scale arrays in place so their joint L2 norm is at most max_norm."""
    total = 0.0
    for a in arrays:
        total += float(np.sum(a * a))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for a in arrays:
            a *= scale
    return norm
