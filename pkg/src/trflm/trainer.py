"""Stochastic-approximation training.

Each iteration draws a minibatch of corpus sentences and a batch of sampler
sentences from persistent chains, then applies three coupled updates: an
Adam step on the potential parameters toward the difference of empirical
and sampled potential gradients, a stochastic move of the per-length
log-normalizer ratios toward the target length occupancy, and a
maximum-likelihood ascent step on the proposal.  Progress is tracked by a
smoothed dev log-likelihood with plateau-based early stopping, and a
rolling cache of recent checkpoints is kept for score averaging.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import proposal as prop
from .corpus import Corpus, flatten_length_probs, length_histogram, sample_minibatch
from .model import TrfModel, log_joint_train, sentence_logprob_batch
from .nn import Adam, GradientError
from .potential import batch_forward_backward
from .sampler import ChainState, JumpConfig, init_chain, refresh_chain, transms_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# learning-rate schedules
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Named learning-rate schedule: const a; pow a*t^b; inv a/(t+b)."""

    kind: str
    a: float
    b: float = 0.0

    def __call__(self, t: int) -> float:
        if self.kind == "const":
            return self.a
        if self.kind == "pow":
            return self.a * t ** self.b
        if self.kind == "inv":
            return self.a / (t + self.b)
        raise ValueError(f"unknown schedule kind: {self.kind}")


def parse_schedule(spec: str) -> Schedule:
    """Parse 'const:a', 'pow:a,b' (a*t^b) or 'inv:a,b' (a/(t+b))."""
    try:
        kind, _, rest = spec.partition(":")
        parts = [float(p) for p in rest.split(",") if p]
        if kind == "const" and len(parts) == 1:
            return Schedule("const", parts[0])
        if kind in ("pow", "inv") and len(parts) == 2:
            return Schedule(kind, parts[0], parts[1])
    except ValueError:
        pass
    raise ValueError(f"bad schedule spec: {spec!r}")


@dataclass
class TrainConfig:
    max_iters: int = 1000
    data_batch_size: int = 1000
    sample_batch_size: int = 100
    num_chains: int = 10
    lr_potential: str = "inv:1.0,10000"
    lr_log_z: str = "pow:1.0,-0.2"
    lr_proposal: str = "const:1.0"
    proposal_clip_norm: float = 5.0
    smooth_window: int = 1000
    plateau_tol: float = 1e-3
    patience: int = 5
    dev_eval_size: int = 200
    checkpoint_every: int | None = None  # iterations; None = once per epoch
    cache_depth: int = 10
    length_floor: float = 0.1
    max_nan_iters: int = 10

    def validate(self) -> None:
        if self.data_batch_size < 1 or self.sample_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.max_iters < 0 or self.num_chains < 1:
            raise ValueError("max_iters must be >= 0 and num_chains >= 1")
        for spec in (self.lr_potential, self.lr_log_z, self.lr_proposal):
            sched = parse_schedule(spec)
            if sched(1) <= 0:
                raise ValueError(f"schedule {spec!r} is not positive")


def init_log_z_ratios(vocab_size: int, max_len: int) -> np.ndarray:
    """Starting ratio estimates: (l-1) * log(vocab size), exact for a zero
    potential."""
    if vocab_size < 2:
        raise ValueError("vocab_size must be at least 2")
    return np.arange(max_len, dtype=np.float64) * np.log(vocab_size)


def update_potential(data_batch, sample_batch, model: TrfModel,
                     adam: Adam, lr: float) -> None:
    """One Adam step on the difference between the data-batch mean potential
    gradient and the importance-weighted sampled mean potential gradient."""
    if not data_batch or not sample_batch:
        raise TrainingError("empty batch in potential update")
    model.params.zero_grad()
    # descent convention: accumulate the negated ascent gradient
    w_data = np.full(len(data_batch), -1.0 / len(data_batch))
    ratios = np.array([
        model.infer_length_probs[len(x) - 1] / model.train_length_probs[len(x) - 1]
        for x in sample_batch])
    if not np.all(np.isfinite(ratios)):
        raise TrainingError("non-finite length importance ratio")
    w_samp = ratios / len(sample_batch)
    batch_forward_backward(data_batch, w_data, model.params)
    batch_forward_backward(sample_batch, w_samp, model.params)
    adam.step(lr)
    model.invalidate()


def update_log_z(sample_lengths, log_z_ratios: np.ndarray,
                 train_length_probs: np.ndarray, lr: float) -> np.ndarray:
    """Move each ratio by lr * (occupancy of its length) / (target prob),
    then re-anchor so the length-1 entry is zero."""
    sample_lengths = np.asarray(sample_lengths)
    if sample_lengths.size == 0:
        raise TrainingError("empty sample batch in normalizer update")
    m = len(log_z_ratios)
    counts = np.bincount(sample_lengths - 1, minlength=m).astype(np.float64)
    delta = counts / sample_lengths.size
    out = log_z_ratios + lr * delta / train_length_probs
    out = out - out[0]
    assert out[0] == 0.0
    return out


@dataclass
class TrainResult:
    iterations: int
    stopped_early: bool
    csv_path: Path
    cached_checkpoints: list[tuple[Path, Path]]
    final_model: Path
    final_proposal: Path


class Trainer:
    """Owns the model, proposal, chains and RNG streams for one run."""

    def __init__(self, model: TrfModel, prop_params: prop.ProposalParams,
                 train_corpus: Corpus, dev_corpus: Corpus,
                 config: TrainConfig, jump: JumpConfig, out_dir,
                 seed: int = 0, callback=None):
        config.validate()
        jump.validate()
        self.model = model
        self.prop_params = prop_params
        self.train_corpus = train_corpus
        self.dev_corpus = dev_corpus
        self.config = config
        self.jump = jump
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "checkpoints").mkdir(exist_ok=True)
        self.callback = callback

        root = np.random.SeedSequence(seed)
        seq_data, seq_chains, *_ = root.spawn(3)
        self.rng_data = np.random.default_rng(seq_data)
        chain_seqs = seq_chains.spawn(config.num_chains)
        self.chains = [init_chain(model, np.random.default_rng(s)) for s in chain_seqs]

        self.adam = Adam(model.params.tensors())
        self.sched_potential = parse_schedule(config.lr_potential)
        self.sched_log_z = parse_schedule(config.lr_log_z)
        self.sched_proposal = parse_schedule(config.lr_proposal)

        self.dev_eval = dev_corpus.sentences[:config.dev_eval_size]
        self.epoch_iters = max(1, -(-len(train_corpus) // config.data_batch_size))
        self.checkpoint_every = config.checkpoint_every or self.epoch_iters
        self.dev_ll_history: list[float] = []
        self.cached: list[tuple[Path, Path]] = []
        self._prev_diag = (0, 0, 0, 0)
        self._nan_streak = 0

    # -- sampling ----------------------------------------------------------

    def collect_samples(self) -> list[np.ndarray]:
        """Advance the persistent chains and record one sample per step."""
        for chain in self.chains:
            refresh_chain(chain, self.model)
        k = self.config.sample_batch_size
        n = len(self.chains)
        quotas = [k // n + (1 if i < k % n else 0) for i in range(n)]
        samples = []
        for chain, quota in zip(self.chains, quotas):
            for _ in range(quota):
                transms_step(chain, self.model, self.prop_params, self.jump)
                samples.append(chain.x.copy())
        return samples

    def _acceptance_rates(self):
        ja = sum(c.jump_attempts for c in self.chains)
        jc = sum(c.jump_accepts for c in self.chains)
        ma = sum(c.move_attempts for c in self.chains)
        mc = sum(c.move_accepts for c in self.chains)
        pja, pjc, pma, pmc = self._prev_diag
        self._prev_diag = (ja, jc, ma, mc)
        jump_rate = (jc - pjc) / max(ja - pja, 1)
        move_rate = (mc - pmc) / max(ma - pma, 1)
        return jump_rate, move_rate

    # -- evaluation --------------------------------------------------------

    def dev_log_likelihood(self) -> float:
        scores = sentence_logprob_batch(self.model, self.dev_eval)
        finite = scores[np.isfinite(scores)]
        if finite.size == 0:
            return float("-inf")
        return float(finite.mean())

    def kl_estimate(self, samples) -> float:
        """Sampled-batch estimate of KL between the model joint (with the
        current ratio estimates) and the proposal."""
        vals = []
        q = prop.sequence_logprob_batch(samples, self.prop_params)
        for x, lq in zip(samples, q):
            vals.append(log_joint_train(self.model, x) - lq)
        return float(np.mean(vals))

    def smoothed_dev_ll(self) -> float:
        w = min(self.config.smooth_window, len(self.dev_ll_history))
        return float(np.mean(self.dev_ll_history[-w:])) if w else float("-inf")

    # -- checkpoints -------------------------------------------------------

    def _save_checkpoint(self, t: int) -> None:
        from .model import save_model  # local import to avoid cycle at module load

        mp = self.out_dir / "checkpoints" / f"model_iter{t:07d}.npz"
        pp = self.out_dir / "checkpoints" / f"proposal_iter{t:07d}.npz"
        save_model(mp, self.model)
        prop.save_proposal(pp, self.prop_params, self.model.vocab)
        self.cached.append((mp, pp))
        while len(self.cached) > self.config.cache_depth:
            old_m, old_p = self.cached.pop(0)
            old_m.unlink(missing_ok=True)
            old_p.unlink(missing_ok=True)

    # -- main loop ---------------------------------------------------------

    def run(self) -> TrainResult:
        from .model import save_model

        cfg = self.config
        csv_path = self.out_dir / "training_log.csv"
        m = self.model.max_len
        stopped_early = False
        best_smoothed = float("-inf")
        stale_windows = 0
        t = 0

        with open(csv_path, "w", encoding="utf-8") as csv:
            header = ["iteration", "dev_ll", "dev_ll_smooth", "kl_pq",
                      "jump_accept_rate", "move_accept_rate"]
            header += [f"log_z_ratio_{l}" for l in range(1, m + 1)]
            csv.write(",".join(header) + "\n")

            for t in range(1, cfg.max_iters + 1):
                data_batch = sample_minibatch(self.train_corpus,
                                              cfg.data_batch_size, self.rng_data)
                samples = self.collect_samples()
                try:
                    update_potential(data_batch, samples, self.model,
                                     self.adam, self.sched_potential(t))
                    self.model.log_z_ratios = update_log_z(
                        [len(x) for x in samples], self.model.log_z_ratios,
                        self.model.train_length_probs, self.sched_log_z(t))
                    prop.update_proposal(samples, self.prop_params,
                                         self.sched_proposal(t),
                                         cfg.proposal_clip_norm)
                    self._nan_streak = 0
                except GradientError as err:
                    self._nan_streak += 1
                    log.warning("iteration %d skipped: %s", t, err)
                    self.model.params.zero_grad()
                    if self._nan_streak >= cfg.max_nan_iters:
                        self._dump_failure(t, str(err))
                        raise TrainingError(
                            f"non-finite gradients for {self._nan_streak} "
                            f"consecutive iterations (last at {t})") from err

                dev_ll = self.dev_log_likelihood()
                self.dev_ll_history.append(dev_ll)
                smoothed = self.smoothed_dev_ll()
                kl = self.kl_estimate(samples)
                jump_rate, move_rate = self._acceptance_rates()

                row = [str(t)] + [format(v, ".12g") for v in
                                  (dev_ll, smoothed, kl, jump_rate, move_rate)]
                row += [format(v, ".12g") for v in self.model.log_z_ratios]
                csv.write(",".join(row) + "\n")

                if self.callback is not None:
                    self.callback(t, self)

                if t % self.checkpoint_every == 0:
                    self._save_checkpoint(t)

                if t % cfg.smooth_window == 0:
                    if smoothed < best_smoothed + cfg.plateau_tol:
                        stale_windows += 1
                    else:
                        stale_windows = 0
                    best_smoothed = max(best_smoothed, smoothed)
                    if stale_windows >= cfg.patience:
                        stopped_early = True
                        log.info("early stop at iteration %d (dev plateau)", t)
                        break

        final_model = self.out_dir / "model_final.npz"
        final_prop = self.out_dir / "proposal_final.npz"
        save_model(final_model, self.model)
        prop.save_proposal(final_prop, self.prop_params, self.model.vocab)
        return TrainResult(
            iterations=t,
            stopped_early=stopped_early,
            csv_path=csv_path,
            cached_checkpoints=list(self.cached),
            final_model=final_model,
            final_proposal=final_prop,
        )

    def _dump_failure(self, t: int, message: str) -> None:
        dump = {
            "iteration": t,
            "message": message,
            "grad_norms": {p.name: float(np.linalg.norm(p.grad))
                           for p in self.model.params.tensors()},
            "log_z_ratios": [float(v) for v in self.model.log_z_ratios],
        }
        (self.out_dir / "failure_dump.json").write_text(
            json.dumps(dump, indent=2, sort_keys=True), encoding="utf-8")


def build_model(potential_config, vocab, train_corpus: Corpus, max_len: int,
                seed: int, length_floor: float = 0.1,
                init_scale: float = 0.1, dtype=np.float64) -> TrfModel:
    """Assemble a fresh model: random potential, empirical length histogram
    for inference, flattened histogram for training, starting ratio
    estimates exact for the zero potential."""
    from .potential import PotentialParams

    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    params = PotentialParams(potential_config, vocab.size, rng=rng,
                             dtype=dtype, init_scale=init_scale)
    infer = length_histogram(train_corpus)
    train_probs = flatten_length_probs(infer, length_floor)
    return TrfModel(
        params=params,
        log_z_ratios=init_log_z_ratios(vocab.size, max_len),
        infer_length_probs=infer,
        train_length_probs=train_probs,
        vocab=vocab,
    )
