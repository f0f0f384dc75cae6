"""Corpus ingestion: vocabulary, token-id sequences, length statistics,
and minibatch selection.

File formats: a corpus file is UTF-8 text, one sentence per line,
whitespace-separated tokens.  A vocab file is one token per line, line
number = id, first line the unknown-word token.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

UNK_TOKEN = "<unk>"


class CorpusError(ValueError):
    pass


@dataclass
class Vocab:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(default_factory=dict)
    unk_id: int = 0

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")
        if self.size < 2:
            raise CorpusError("vocabulary needs at least 2 entries")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def decode(self, ids) -> str:
        return " ".join(self.id_to_token[int(i)] for i in ids)


def build_vocab(lines, max_size: int) -> Vocab:
    """Frequency-ranked vocabulary (ties lexicographic), unk always first."""
    if max_size < 2:
        raise CorpusError("max_size must be at least 2")
    counts = Counter()
    for line in lines:
        counts.update(line.split())
    counts.pop(UNK_TOKEN, None)
    if not counts:
        raise CorpusError("empty corpus: no tokens found")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 1]]
    return Vocab(id_to_token=[UNK_TOKEN] + kept)


def write_vocab(vocab: Vocab, path) -> None:
    Path(path).write_text("\n".join(vocab.id_to_token) + "\n", encoding="utf-8")


def read_vocab(path) -> Vocab:
    tokens = Path(path).read_text(encoding="utf-8").splitlines()
    tokens = [t for t in tokens if t]
    if not tokens:
        raise CorpusError(f"empty vocab file: {path}")
    if tokens[0] != UNK_TOKEN:
        raise CorpusError(f"vocab file must start with {UNK_TOKEN}: {path}")
    return Vocab(id_to_token=tokens)


def encode(text: str, vocab: Vocab, max_len: int | None = None) -> np.ndarray:
    """Whitespace-tokenize and map to ids; unknown tokens map to unk."""
    tokens = text.split()
    if not tokens:
        raise CorpusError("cannot encode empty text")
    if max_len is not None and len(tokens) > max_len:
        raise CorpusError(f"sentence length {len(tokens)} exceeds maximum {max_len}")
    return np.array([vocab.lookup(t) for t in tokens], dtype=np.int64)


@dataclass
class Corpus:
    """Immutable sentence store with per-length buckets."""

    sentences: list[np.ndarray]
    max_len: int

    def __post_init__(self):
        if not self.sentences:
            raise CorpusError("empty corpus")
        self.by_length: dict[int, list[int]] = {}
        for i, s in enumerate(self.sentences):
            l = len(s)
            if l < 1 or l > self.max_len:
                raise CorpusError(f"sentence {i} has invalid length {l}")
            self.by_length.setdefault(l, []).append(i)

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def token_count(self) -> int:
        return sum(len(s) for s in self.sentences)


def load_corpus(path, vocab: Vocab, max_len: int) -> Corpus:
    """Read a corpus file; sentences longer than max_len are truncated."""
    sentences = []
    truncated = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) > max_len:
                tokens = tokens[:max_len]
                truncated += 1
            sentences.append(
                np.array([vocab.lookup(t) for t in tokens], dtype=np.int64)
            )
    if truncated:
        log.warning("truncated %d sentences longer than %d in %s", truncated, max_len, path)
    if not sentences:
        raise CorpusError(f"no sentences in corpus file: {path}")
    return Corpus(sentences=sentences, max_len=max_len)


def write_corpus(sentences, vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(vocab.decode(s) + "\n")


def length_histogram(corpus: Corpus) -> np.ndarray:
    """Empirical length probabilities, index l-1 for length l."""
    probs = np.zeros(corpus.max_len, dtype=np.float64)
    for l, idxs in corpus.by_length.items():
        probs[l - 1] = len(idxs)
    return probs / len(corpus)


def check_length_dist(probs: np.ndarray) -> None:
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise CorpusError("length distribution must be nonnegative and sum to 1")


def flatten_length_probs(probs: np.ndarray, floor_frac: float = 0.1) -> np.ndarray:
    """Training-time length distribution: the empirical one, floored at
    floor_frac of its maximum so every length keeps sampling mass."""
    floored = np.maximum(probs, floor_frac * probs.max())
    return floored / floored.sum()


def sample_minibatch(corpus: Corpus, size: int, rng: np.random.Generator):
    """Draw ``size`` sentences uniformly with replacement."""
    if size < 1:
        raise CorpusError("minibatch size must be at least 1")
    idx = rng.integers(0, len(corpus), size=size)
    return [corpus.sentences[i] for i in idx]
