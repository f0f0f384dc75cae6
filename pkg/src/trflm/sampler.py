"""Trans-dimensional mixture sampling kernel.

Each step is a local jump between neighboring lengths (extension proposals
drawn from the autoregressive proposal, truncations scored by it) followed
by a within-length Markov move that block-resamples the sentence left to
right using multiple-trial independence sampling.  All acceptance
arithmetic is done in log space; ratios of the model joint never need the
length-1 normalizer, which cancels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import proposal as prop
from .model import TrfModel
from .nn import logsumexp
from .potential import potential_forward, potential_value


@dataclass
class JumpConfig:
    jump_range: int = 2
    block_size: int = 5
    num_trials: int = 10

    def validate(self) -> None:
        if self.jump_range < 1 or self.block_size < 1 or self.num_trials < 1:
            raise ValueError("jump_range, block_size and num_trials must be >= 1")


@dataclass
class ChainState:
    """One sampler chain: current sentence, its cached potential, an owned
    RNG stream, and acceptance diagnostics."""

    x: np.ndarray
    log_pot: float
    rng: np.random.Generator
    jump_attempts: int = 0
    jump_accepts: int = 0
    move_attempts: int = 0
    move_accepts: int = 0
    aborted_proposals: int = 0

    @property
    def length(self) -> int:
        return len(self.x)


def init_chain(model: TrfModel, rng: np.random.Generator) -> ChainState:
    """Start a chain at a length drawn from the training length prior with
    uniform random tokens."""
    l = 1 + int(rng.choice(model.max_len, p=model.train_length_probs))
    x = rng.integers(0, model.params.vocab_size, size=l).astype(np.int64)
    return ChainState(x=x, log_pot=potential_value(x, model.params), rng=rng)


def refresh_chain(state: ChainState, model: TrfModel) -> None:
    """Recompute the cached potential (call after parameter updates)."""
    state.log_pot = potential_value(state.x, model.params)


def jump_distribution(k: int, m: int, r: int) -> np.ndarray:
    """Uniform distribution over lengths within r of k, clipped to [1, m]."""
    if not 1 <= k <= m:
        raise ValueError("current length out of range")
    lo, hi = max(k - r, 1), min(k + r, m)
    probs = np.zeros(m, dtype=np.float64)
    probs[lo - 1:hi] = 1.0 / (hi - lo + 1)
    return probs


def _log_gamma(k: int, m: int, r: int) -> float:
    lo, hi = max(k - r, 1), min(k + r, m)
    return -np.log(hi - lo + 1)


def _log_weight(model: TrfModel, length: int, log_pot: float) -> float:
    """Training joint up to the constant length-1 normalizer."""
    return float(np.log(model.train_length_probs[length - 1]) + log_pot
                 - model.log_z_ratios[length - 1])


def _accept(rng: np.random.Generator, log_ratio: float) -> bool:
    if np.isnan(log_ratio):
        raise FloatingPointError("NaN acceptance ratio")
    if log_ratio >= 0:
        return True
    return np.log(rng.random()) < log_ratio


def local_jump(state: ChainState, model: TrfModel, prop_params,
               cfg: JumpConfig) -> tuple[int, float | None] | None:
    """Propose a length change of at most jump_range and accept by the
    Metropolis-Hastings ratio; a rejected or abandoned proposal leaves the
    state unchanged.

    Returns None when the drawn length equals the current one, otherwise
    (proposed_length, log_acceptance); log_acceptance is None when the
    extension draw ended early and the proposal was abandoned.
    """
    k = state.length
    m = model.max_len
    r = cfg.jump_range
    lo, hi = max(k - r, 1), min(k + r, m)
    j = int(state.rng.integers(lo, hi + 1))
    if j == k:
        return None
    state.jump_attempts += 1
    log_gamma_fwd = _log_gamma(k, m, r)
    log_gamma_rev = _log_gamma(j, m, r)
    cur = _log_weight(model, k, state.log_pot)

    if j > k:
        u, logg = prop.sample_continuation(state.x, j - k, prop_params, state.rng)
        if u is None:
            state.aborted_proposals += 1
            return (j, None)
        x_new = np.concatenate([state.x, u])
        pot_new = potential_value(x_new, model.params)
        log_acc = (log_gamma_rev - log_gamma_fwd
                   + _log_weight(model, j, pot_new) - cur - logg)
    else:
        x_new = state.x[:j]
        pot_new = potential_value(x_new, model.params)
        logg = prop.continuation_logprob(state.x[j:], x_new, prop_params)
        log_acc = (log_gamma_rev - log_gamma_fwd
                   + _log_weight(model, j, pot_new) + logg - cur)

    if _accept(state.rng, log_acc):
        state.x = x_new
        state.log_pot = pot_new
        state.jump_accepts += 1
    return (j, log_acc)


def mtmis_log_acceptance(log_w: np.ndarray, pick: int, log_w_cur: float) -> float:
    """Multiple-trial independence-sampling ratio in log space:
    log of W / (W - w(selected) + w(current)).  With one trial this reduces
    to the plain independence ratio w(selected)/w(current)."""
    log_total = logsumexp(log_w)
    others = np.append(np.delete(log_w, pick), log_w_cur)
    return log_total - logsumexp(others)


def markov_move(state: ChainState, model: TrfModel, prop_params, cfg: JumpConfig) -> None:
    """Block Gibbs sweep at fixed length: at each block, draw num_trials
    independent continuations from the proposal, pick one by importance
    weight, and accept by the multiple-trial independence-sampling ratio."""
    l = state.length
    s = cfg.block_size
    mt = cfg.num_trials
    h1, c1 = prop.initial_state(prop_params, 1)
    pos = 0
    while pos < l:
        blk = min(s, l - pos)
        state.move_attempts += 1
        h = np.repeat(h1, mt + 1, axis=0)
        c = np.repeat(c1, mt + 1, axis=0)
        cur_block = state.x[pos:pos + blk]
        tokens, logg, alive, _, _ = prop.sample_block(
            prop_params, h, c, blk, state.rng, forced=cur_block)
        logg_cur = float(logg[-1])

        trial_rows = np.flatnonzero(alive[:mt])
        if trial_rows.size:
            cand = np.empty((trial_rows.size, l), dtype=np.int64)
            cand[:, :pos] = state.x[:pos]
            cand[:, pos:pos + blk] = tokens[trial_rows]
            cand[:, pos + blk:] = state.x[pos + blk:]
            pots, _ = potential_forward(cand, model.params)
            base = float(np.log(model.train_length_probs[l - 1])
                         - model.log_z_ratios[l - 1])
            log_w = base + pots - logg[trial_rows]
            log_w_cur = base + state.log_pot - logg_cur

            log_total = logsumexp(log_w)
            cum = np.cumsum(np.exp(log_w - log_total))
            pick = int(np.searchsorted(cum, state.rng.random(), side="right"))
            pick = min(pick, trial_rows.size - 1)
            others = np.append(np.delete(log_w, pick), log_w_cur)
            log_acc = log_total - logsumexp(others)
            if _accept(state.rng, log_acc):
                state.x = cand[pick].copy()
                state.log_pot = float(pots[pick])
                state.move_accepts += 1
        h1, c1 = prop.advance(prop_params, h1, c1, state.x[pos:pos + blk][None, :])
        pos += blk


def transms_step(state: ChainState, model: TrfModel, prop_params, cfg: JumpConfig) -> None:
    """One full kernel step: local jump, then Markov move."""
    cfg.validate()
    local_jump(state, model, prop_params, cfg)
    markov_move(state, model, prop_params, cfg)
