"""The trans-dimensional random field over (length, sentence) pairs.

A sentence of length l is scored by its network potential; lengths are tied
together by a length distribution and per-length log-normalizer offsets
relative to the exactly computable length-1 normalizer.  Sentence scoring
needs one potential forward pass and no per-position vocabulary sums.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .checkpoint import load_tensors, save_tensors
from .corpus import Corpus, Vocab, check_length_dist
from .potential import PotentialConfig, PotentialParams, potential_batch, potential_forward

log = logging.getLogger(__name__)

ENUM_GUARD = 10 ** 6


class ModelError(RuntimeError):
    pass


def normalize_log_z_ratios(values: np.ndarray) -> np.ndarray:
    """Anchor the ratio vector so the length-1 entry is exactly zero."""
    values = np.asarray(values, dtype=np.float64)
    out = values - values[0]
    if not np.all(np.isfinite(out)):
        raise ModelError("non-finite log-normalizer ratios")
    return out


class TrfModel:
    """Potential parameters plus normalizer estimates and length priors.

    ``infer_length_probs`` is the empirical length distribution used for
    scoring; ``train_length_probs`` is the flattened distribution the
    sampler and trainer target.
    """

    def __init__(self, params: PotentialParams, log_z_ratios: np.ndarray,
                 infer_length_probs: np.ndarray, train_length_probs: np.ndarray,
                 vocab: Vocab):
        self.params = params
        self.log_z_ratios = normalize_log_z_ratios(log_z_ratios)
        self.infer_length_probs = np.asarray(infer_length_probs, dtype=np.float64)
        self.train_length_probs = np.asarray(train_length_probs, dtype=np.float64)
        self.vocab = vocab
        self.max_len = len(self.log_z_ratios)
        check_length_dist(self.infer_length_probs)
        check_length_dist(self.train_length_probs)
        if len(self.infer_length_probs) != self.max_len \
                or len(self.train_length_probs) != self.max_len:
            raise ModelError("length distributions must cover lengths 1..max_len")
        self._log_z1: float | None = None

    @property
    def log_z1(self) -> float:
        """Exact log normalizer for length 1, cached until parameters change."""
        if self._log_z1 is None:
            self._log_z1 = log_z1_exact(self.params)
        return self._log_z1

    def invalidate(self) -> None:
        self._log_z1 = None

    def check_seq(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.ndim != 1 or not 1 <= len(x) <= self.max_len:
            raise ModelError(f"sequence length must be in [1, {self.max_len}]")
        return x


def log_z1_exact(params: PotentialParams) -> float:
    """log sum over the vocabulary of exp(potential) for length-1 sentences.

    This is the one vocabulary-sized normalization in the model; it is
    counted so scoring paths can assert they never trigger it.
    """
    ids = np.arange(params.vocab_size, dtype=np.int64)[:, None]
    values, _ = potential_forward(ids, params)
    nn.count_vocab_normalizations()
    return nn.logsumexp(values)


def enumerate_log_z(params: PotentialParams, length: int,
                    guard: int = ENUM_GUARD) -> float:
    """Exact log normalizer for a given length by full enumeration."""
    v = params.vocab_size
    if v ** length > guard:
        raise ModelError(f"enumeration of {v}^{length} sequences exceeds guard")
    ids = np.array(list(itertools.product(range(v), repeat=length)), dtype=np.int64)
    values, _ = potential_forward(ids, params)
    return nn.logsumexp(values)


def exact_log_z_ratios(params: PotentialParams, max_len: int,
                       guard: int = ENUM_GUARD) -> np.ndarray:
    """Enumerated log(Z_l / Z_1) for l = 1..max_len."""
    logs = np.array([enumerate_log_z(params, l, guard) for l in range(1, max_len + 1)])
    return logs - logs[0]


def log_joint_train(model: TrfModel, x) -> float:
    """Log of the training-time joint: train length prior, potential,
    length-1 normalizer and the ratio estimate for the sentence's length."""
    x = model.check_seq(x)
    l = len(x)
    p0 = model.train_length_probs[l - 1]
    if p0 <= 0.0:
        raise ModelError(f"training length prior is zero at length {l}")
    value, _ = potential_forward(x, model.params)
    return float(np.log(p0) + value - model.log_z1 - model.log_z_ratios[l - 1])


def sentence_logprob(model: TrfModel, x) -> float:
    """Softmax-free sentence score: empirical length prior plus potential
    minus the (cached) length-1 normalizer and the length's ratio estimate.

    Lengths with zero empirical probability score -inf with a warning.
    """
    x = model.check_seq(x)
    l = len(x)
    p = model.infer_length_probs[l - 1]
    if p <= 0.0:
        log.warning("scoring length %d with zero empirical probability: -inf", l)
        return float("-inf")
    value, _ = potential_forward(x, model.params)
    return float(np.log(p) + value - model.log_z1 - model.log_z_ratios[l - 1])


def sentence_logprob_batch(model: TrfModel, seqs) -> np.ndarray:
    """Vectorized sentence scores; same semantics as sentence_logprob."""
    out = np.empty(len(seqs), dtype=np.float64)
    scorable = []
    scorable_idx = []
    for i, s in enumerate(seqs):
        s = model.check_seq(s)
        if model.infer_length_probs[len(s) - 1] <= 0.0:
            log.warning("scoring length %d with zero empirical probability: -inf", len(s))
            out[i] = -np.inf
        else:
            scorable.append(s)
            scorable_idx.append(i)
    if scorable:
        values = potential_batch(scorable, model.params)
        for i, s, v in zip(scorable_idx, scorable, values):
            l = len(s)
            out[i] = np.log(model.infer_length_probs[l - 1]) + v \
                - model.log_z1 - model.log_z_ratios[l - 1]
    return out


@dataclass
class PplReport:
    ppl: float
    tokens: int
    sentences: int
    excluded: int


def perplexity(model: TrfModel, corpus: Corpus) -> PplReport:
    """Per-word perplexity over a corpus; sentences whose length has zero
    empirical probability are excluded and counted in the report."""
    kept = [s for s in corpus.sentences
            if model.infer_length_probs[len(s) - 1] > 0.0]
    excluded = len(corpus.sentences) - len(kept)
    if not kept:
        raise ModelError("no scorable sentences in the test corpus")
    logprobs = sentence_logprob_batch(model, kept)
    tokens = sum(len(s) for s in kept)
    ppl = float(np.exp(-logprobs.sum() / tokens))
    return PplReport(ppl=ppl, tokens=tokens, sentences=len(kept), excluded=excluded)


def enumerate_joint(model: TrfModel, guard: int = ENUM_GUARD):
    """Exact joint over all (length, sentence) states for tiny fixtures.

    Returns (states, logprobs) where states is a list of id tuples and the
    log-probabilities use the training-time joint with the model's current
    ratio estimates (exact when those are exact).
    """
    states = []
    logps = []
    v = model.params.vocab_size
    log_z1 = model.log_z1
    for l in range(1, model.max_len + 1):
        if v ** l > guard:
            raise ModelError("fixture too large to enumerate")
        ids = np.array(list(itertools.product(range(v), repeat=l)), dtype=np.int64)
        values, _ = potential_forward(ids, model.params)
        p0 = model.train_length_probs[l - 1]
        base = (np.log(p0) if p0 > 0 else -np.inf) - log_z1 - model.log_z_ratios[l - 1]
        for row, val in zip(ids, values):
            states.append(tuple(int(t) for t in row))
            logps.append(base + val)
    return states, np.array(logps)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def save_model(path, model: TrfModel) -> None:
    arrays = {f"theta/{k}": v for k, v in model.params.named_arrays().items()}
    arrays["log_z_ratios"] = model.log_z_ratios
    arrays["infer_length_probs"] = model.infer_length_probs
    arrays["train_length_probs"] = model.train_length_probs
    arrays["vocab"] = np.array(model.vocab.id_to_token)
    cfg = model.params.config
    meta = {
        "kind": "trf_model",
        "vocab_size": model.params.vocab_size,
        "max_len": model.max_len,
        "config": {
            "embed_size": cfg.embed_size,
            "proj_size": cfg.proj_size,
            "max_kernel": cfg.max_kernel,
            "filters_per_width": cfg.filters_per_width,
            "stack_layers": cfg.stack_layers,
            "stack_size": cfg.stack_size,
            "stack_width": cfg.stack_width,
            "pool_width": cfg.pool_width,
        },
    }
    save_tensors(path, arrays, meta)


def load_model(path) -> TrfModel:
    arrays, meta = load_tensors(path)
    if meta.get("kind") != "trf_model":
        raise ModelError(f"not a model checkpoint: {path}")
    config = PotentialConfig(**meta["config"])
    params = PotentialParams(config, meta["vocab_size"])
    params.load_arrays({k.split("/", 1)[1]: v for k, v in arrays.items()
                        if k.startswith("theta/")})
    vocab = Vocab(id_to_token=[str(t) for t in arrays["vocab"]])
    return TrfModel(
        params=params,
        log_z_ratios=arrays["log_z_ratios"],
        infer_length_probs=arrays["infer_length_probs"],
        train_length_probs=arrays["train_length_probs"],
        vocab=vocab,
    )
