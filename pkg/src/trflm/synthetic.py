"""Synthetic data generators for experiments and verification fixtures:
tiny enumerable random fields with exact normalizers, and a Markov-chain
corpus with strong bigram structure.
"""
from __future__ import annotations

import numpy as np

from .corpus import UNK_TOKEN, Corpus, Vocab
from .model import TrfModel, enumerate_joint, exact_log_z_ratios
from .potential import PotentialConfig, PotentialParams
from .trainer import init_log_z_ratios

FIXTURE_POTENTIAL = PotentialConfig(
    embed_size=4, proj_size=3, max_kernel=2, filters_per_width=3,
    stack_layers=1, stack_size=3, stack_width=2)


def make_vocab(size: int) -> Vocab:
    """Vocabulary of the requested total size: unk plus w1, w2, ..."""
    if size < 2:
        raise ValueError("vocab size must be at least 2")
    return Vocab(id_to_token=[UNK_TOKEN] + [f"w{i}" for i in range(1, size)])


def make_generator_model(vocab: Vocab, max_len: int, seed: int,
                         config: PotentialConfig | None = None,
                         scale: float = 0.8,
                         length_probs: np.ndarray | None = None) -> TrfModel:
    """A small random field with exactly enumerated normalizer ratios, used
    as a known generating distribution."""
    config = config or FIXTURE_POTENTIAL
    params = PotentialParams(config, vocab.size,
                             rng=np.random.default_rng(seed), init_scale=scale)
    if length_probs is None:
        length_probs = np.full(max_len, 1.0 / max_len)
    return TrfModel(
        params=params,
        log_z_ratios=exact_log_z_ratios(params, max_len),
        infer_length_probs=length_probs,
        train_length_probs=length_probs,
        vocab=vocab,
    )


def uniform_model(vocab: Vocab, max_len: int) -> TrfModel:
    """Zero potential and exact ratios: the uniform trans-dimensional model."""
    params = PotentialParams(FIXTURE_POTENTIAL, vocab.size)
    for p in params.tensors():
        p.values[...] = 0.0
    probs = np.full(max_len, 1.0 / max_len)
    return TrfModel(params=params,
                    log_z_ratios=init_log_z_ratios(vocab.size, max_len),
                    infer_length_probs=probs, train_length_probs=probs,
                    vocab=vocab)


def sample_from_model(model: TrfModel, n: int, rng: np.random.Generator):
    """Exact iid draws from an enumerable model's joint."""
    states, logps = enumerate_joint(model)
    probs = np.exp(logps)
    probs = probs / probs.sum()
    idx = rng.choice(len(states), size=n, p=probs)
    return [np.array(states[i], dtype=np.int64) for i in idx]


def make_markov_corpus(vocab_size: int, n_sentences: int, min_len: int,
                       max_len: int, seed: int,
                       concentration: float = 3.0):
    """Sentences from a first-order Markov chain with peaked transition
    rows, giving the corpus strong bigram structure."""
    rng = np.random.default_rng(seed)

    def peaked(row_logits):
        e = np.exp(concentration * row_logits)
        return e / e.sum()

    init = peaked(rng.normal(size=vocab_size))
    trans = np.stack([peaked(rng.normal(size=vocab_size))
                      for _ in range(vocab_size)])
    lengths = np.arange(min_len, max_len + 1)
    length_probs = (lengths.max() + 1.0 - lengths).astype(np.float64)
    length_probs /= length_probs.sum()

    sentences = []
    for _ in range(n_sentences):
        l = int(rng.choice(lengths, p=length_probs))
        x = np.empty(l, dtype=np.int64)
        x[0] = rng.choice(vocab_size, p=init)
        for i in range(1, l):
            x[i] = rng.choice(vocab_size, p=trans[x[i - 1]])
        sentences.append(x)
    return sentences


def corrupt_sentence(x: np.ndarray, n_edits: int, vocab_size: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Random token substitutions, used to build n-best style hypotheses."""
    y = x.copy()
    for _ in range(n_edits):
        pos = int(rng.integers(0, len(y)))
        y[pos] = int(rng.integers(0, vocab_size))
    return y
