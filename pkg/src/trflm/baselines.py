"""Simple reference language models used for comparisons."""
from __future__ import annotations

import numpy as np

from .corpus import Corpus, length_histogram


def unigram_ppl(train: Corpus, test: Corpus, vocab_size: int) -> float:
    """Per-word perplexity of an add-one-smoothed unigram token model joined
    with the empirical length distribution, the natural sentence-level
    baseline for models over (length, sentence) pairs."""
    counts = np.zeros(vocab_size, dtype=np.float64)
    for s in train.sentences:
        np.add.at(counts, s, 1.0)
    log_tok = np.log(counts + 1.0) - np.log(counts.sum() + vocab_size)
    length_probs = length_histogram(train)

    total_lp = 0.0
    total_tokens = 0
    for s in test.sentences:
        p_len = length_probs[len(s) - 1]
        if p_len <= 0.0:
            continue
        total_lp += np.log(p_len) + log_tok[s].sum()
        total_tokens += len(s)
    if total_tokens == 0:
        raise ValueError("no scorable sentences for the unigram baseline")
    return float(np.exp(-total_lp / total_tokens))
