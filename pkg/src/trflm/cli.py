"""Command-line surface: train, ppl, sample, rescore, interpolate, wer,
score-aux.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command accepts --seed and is replay-deterministic in the default
single-worker mode; the TRFLM_LOG environment variable sets log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, rescore as rs
from .config import ConfigError, load_run_config
from .corpus import (CorpusError, build_vocab, load_corpus, read_vocab,
                     write_vocab)
from .model import ModelError, load_model, perplexity, save_model
from .potential import load_embeddings_text
from .proposal import ProposalParams, load_proposal, sequence_logprob_batch
from .sampler import JumpConfig, init_chain, transms_step
from .trainer import Trainer, TrainingError, build_model

log = logging.getLogger("trflm")


def _setup_logging() -> None:
    level = os.environ.get("TRFLM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    overrides = {"seed": args.seed, "out_dir": args.out_dir}
    cfg = load_run_config(args.config, overrides)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.vocab_file:
        vocab = read_vocab(cfg.vocab_file)
    else:
        with open(cfg.train_corpus, encoding="utf-8") as fh:
            vocab = build_vocab(fh, cfg.vocab_size)
    write_vocab(vocab, out_dir / "vocab.txt")

    train_corpus = load_corpus(cfg.train_corpus, vocab, cfg.max_len)
    dev_corpus = (load_corpus(cfg.dev_corpus, vocab, cfg.max_len)
                  if cfg.dev_corpus else train_corpus)

    seed_model, seed_prop, seed_train = (
        int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(3))
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    model = build_model(cfg.potential, vocab, train_corpus, cfg.max_len,
                        seed=seed_model, length_floor=cfg.training.length_floor,
                        init_scale=cfg.init_scale, dtype=dtype)
    if cfg.embedding_file:
        n = load_embeddings_text(model.params, vocab, cfg.embedding_file)
        log.info("imported %d embedding rows from %s", n, cfg.embedding_file)
    prop_params = ProposalParams(cfg.proposal, vocab.size,
                                 rng=np.random.default_rng(seed_prop),
                                 dtype=dtype, init_scale=cfg.init_scale)

    trainer = Trainer(model, prop_params, train_corpus, dev_corpus,
                      cfg.training, cfg.jump, out_dir, seed=seed_train)
    result = trainer.run()
    print(f"iterations={result.iterations} stopped_early={result.stopped_early}")
    print(f"model={result.final_model}")
    print(f"proposal={result.final_proposal}")
    print(f"log={result.csv_path}")
    print(f"cached_checkpoints={len(result.cached_checkpoints)}")
    return 0


# --------------------------------------------------------------------------
# ppl / score-aux
# --------------------------------------------------------------------------

def cmd_ppl(args) -> int:
    model = load_model(args.model)
    corpus = load_corpus(args.corpus, model.vocab, model.max_len)
    report = perplexity(model, corpus)
    print(f"ppl={report.ppl:.6f} tokens={report.tokens} "
          f"sentences={report.sentences} excluded={report.excluded}")
    return 0


def cmd_score_aux(args) -> int:
    params, vocab = load_proposal(args.proposal)
    seqs = []
    with open(args.corpus, encoding="utf-8") as fh:
        for line in fh:
            tokens = line.split()
            if tokens:
                seqs.append(np.array([vocab.lookup(t) for t in tokens],
                                     dtype=np.int64))
    if not seqs:
        raise CorpusError(f"no sentences in {args.corpus}")
    scores = sequence_logprob_batch(seqs, params)
    for i, v in enumerate(scores):
        print(f"{i}\t{v:.6f}")
    tokens = sum(len(s) for s in seqs)
    print(f"aux_ppl={np.exp(-scores.sum() / tokens):.6f} tokens={tokens} "
          f"sentences={len(seqs)}")
    return 0


# --------------------------------------------------------------------------
# sample
# --------------------------------------------------------------------------

def cmd_sample(args) -> int:
    model = load_model(args.model)
    prop_params, _ = load_proposal(args.proposal)
    cfg = JumpConfig(jump_range=args.jump_range, block_size=args.block_size,
                     num_trials=args.num_trials)
    chain = init_chain(model, np.random.default_rng(args.seed))
    for _ in range(args.burn_in):
        transms_step(chain, model, prop_params, cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        for _ in range(args.count):
            jumps, moves = chain.jump_accepts, chain.move_accepts
            transms_step(chain, model, prop_params, cfg)
            record = {
                "length": int(chain.length),
                "tokens": model.vocab.decode(chain.x).split(),
                "log_phi": chain.log_pot,
                "accepted_jump": chain.jump_accepts > jumps,
                "accepted_moves": chain.move_accepts - moves,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return 0


# --------------------------------------------------------------------------
# rescore / interpolate / wer
# --------------------------------------------------------------------------

_worker_ctx: dict = {}


def _worker_init(model_paths, texts):
    _worker_ctx["models"] = {p: load_model(p) for p in model_paths}
    _worker_ctx["texts"] = texts


def _worker_score(path):
    from .model import sentence_logprob_batch
    from .corpus import encode

    model = _worker_ctx["models"][path]
    encoded = [encode(t, model.vocab, model.max_len) for t in _worker_ctx["texts"]]
    return list(sentence_logprob_batch(model, encoded))


def cmd_rescore(args) -> int:
    nbest = rs.read_nbest(args.nbest)
    models = [load_model(p) for p in args.models]
    vocab0 = models[0].vocab.id_to_token
    for p, m in zip(args.models, models):
        if m.vocab.id_to_token != vocab0:
            raise rs.RescoreError(f"model {p} has a different vocabulary")
    model_ids = [f"model_{i}" for i in range(len(models))]

    if args.workers > 1 and len(models) > 1:
        keys, encoded, unscorable = rs.split_hypotheses(nbest, models[0].vocab,
                                                        models[0].max_len)
        texts = [models[0].vocab.decode(e) for e in encoded]
        with ProcessPoolExecutor(max_workers=min(args.workers, len(models)),
                                 initializer=_worker_init,
                                 initargs=(list(args.models), texts)) as pool:
            per_model = list(pool.map(_worker_score, args.models))
        table = rs.assemble_table(keys, per_model, unscorable, model_ids)
    else:
        table = rs.rescore(nbest, models, model_ids)

    rs.write_score_csv(table, args.out)
    print(f"scored {len(list(table.keys()))} hypotheses with {len(models)} models")
    if args.select:
        best = rs.select_best(nbest, table, acoustic_weight=args.acoustic_weight)
        rs.write_selection(best, args.select)
        print(f"selection written to {args.select}")
    return 0


def cmd_interpolate(args) -> int:
    a = rs.read_score_csv(args.table_a)
    b = rs.read_score_csv(args.table_b)
    out = rs.interpolate(a, b, args.weight)
    rs.write_score_csv(out, args.out)
    print(f"interpolated {len(list(out.keys()))} scores with weight {args.weight}")
    return 0


def cmd_wer(args) -> int:
    hyps = rs.read_refs(args.hyp)
    refs = rs.read_refs(args.ref)
    report = rs.wer(hyps, refs)
    print(f"wer={report.wer:.6f} sub={report.substitutions} "
          f"del={report.deletions} ins={report.insertions} "
          f"ref_words={report.ref_words}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trflm",
        description="Trans-dimensional random field language models")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out-dir", default=None, help="override config out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ppl", help="per-word perplexity of a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ppl)

    p = sub.add_parser("sample", help="emit sampler states as JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--proposal", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--jump-range", type=int, default=2)
    p.add_argument("--block-size", type=int, default=5)
    p.add_argument("--num-trials", type=int, default=10)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("rescore", help="score an n-best file with one or more models")
    p.add_argument("--nbest", required=True)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--select", default=None, help="write best hypotheses here")
    p.add_argument("--acoustic-weight", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=1,
                   help="process count; 1 guarantees bit-exact replay")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("interpolate", help="log-linear combination of two score tables")
    p.add_argument("--table-a", required=True)
    p.add_argument("--table-b", required=True)
    p.add_argument("--weight", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("wer", help="word error rate between hyp and ref files")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_wer)

    p = sub.add_parser("score-aux", help="score sentences with the proposal model")
    p.add_argument("--proposal", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score_aux)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (CorpusError, ModelError, TrainingError, rs.RescoreError,
            ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
