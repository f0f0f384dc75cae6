"""N-best rescoring, checkpoint score averaging, log-linear interpolation,
and word error rate.

File formats: an n-best file has lines ``<utt_id> <hyp_index> [am=<float>]
<token ...>``; a reference file has lines ``<utt_id> <token ...>``; score
tables are CSV ``utt_id,hyp_index,model_id,logprob``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusError, encode
from .model import TrfModel, sentence_logprob_batch

log = logging.getLogger(__name__)

MEAN_COLUMN = "mean"


class RescoreError(ValueError):
    pass


@dataclass
class Hypothesis:
    index: int
    text: str
    acoustic: float | None = None


def read_nbest(path) -> dict[str, list[Hypothesis]]:
    nbest: dict[str, list[Hypothesis]] = {}
    seen: set[tuple[str, int]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise RescoreError(f"{path}:{lineno}: need utt_id and hyp_index")
            utt, idx = parts[0], int(parts[1])
            if (utt, idx) in seen:
                raise RescoreError(f"{path}:{lineno}: duplicate hypothesis index")
            seen.add((utt, idx))
            rest = parts[2:]
            acoustic = None
            if rest and rest[0].startswith("am="):
                acoustic = float(rest[0][3:])
                rest = rest[1:]
            nbest.setdefault(utt, []).append(
                Hypothesis(index=idx, text=" ".join(rest), acoustic=acoustic))
    if not nbest:
        raise RescoreError(f"empty n-best file: {path}")
    return nbest


def read_refs(path) -> dict[str, str]:
    refs = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                refs[parts[0]] = " ".join(parts[1:])
    if not refs:
        raise RescoreError(f"empty reference file: {path}")
    return refs


class ScoreTable:
    """Log scores per (utterance, hypothesis) and per model column."""

    def __init__(self, model_ids: list[str]):
        self.model_ids = list(model_ids)
        self.scores: dict[tuple[str, int], dict[str, float]] = {}

    def set(self, utt: str, idx: int, model_id: str, value: float) -> None:
        self.scores.setdefault((utt, idx), {})[model_id] = value

    def get(self, utt: str, idx: int, model_id: str = MEAN_COLUMN) -> float:
        try:
            return self.scores[(utt, idx)][model_id]
        except KeyError:
            raise RescoreError(f"missing score for {utt!r} #{idx} [{model_id}]")

    def keys(self):
        return self.scores.keys()


def split_hypotheses(nbest: dict[str, list[Hypothesis]], vocab, max_len: int):
    """Partition hypotheses into encodable ones and unscorable keys."""
    keys, encoded, unscorable = [], [], []
    for utt in sorted(nbest):
        for hyp in nbest[utt]:
            key = (utt, hyp.index)
            try:
                encoded.append(encode(hyp.text, vocab, max_len))
                keys.append(key)
            except CorpusError:
                unscorable.append(key)
    if unscorable:
        log.warning("%d hypotheses scored -inf (empty or longer than %d)",
                    len(unscorable), max_len)
    return keys, encoded, unscorable


def assemble_table(keys, per_model, unscorable, model_ids) -> ScoreTable:
    """Build a score table with per-model columns plus the averaged one."""
    table = ScoreTable(list(model_ids) + [MEAN_COLUMN])
    for j, key in enumerate(keys):
        column = [per_model[i][j] for i in range(len(model_ids))]
        for mid, v in zip(model_ids, column):
            table.set(key[0], key[1], mid, float(v))
        table.set(key[0], key[1], MEAN_COLUMN, float(np.mean(column)))
    for key in unscorable:
        for mid in list(model_ids) + [MEAN_COLUMN]:
            table.set(key[0], key[1], mid, float("-inf"))
    return table


def rescore(nbest: dict[str, list[Hypothesis]], models: list[TrfModel],
            model_ids: list[str] | None = None) -> ScoreTable:
    """Score every hypothesis under every model plus the averaged column.

    Hypotheses that cannot be scored (empty, too long, or a length with
    zero empirical probability) get -inf and are counted in a warning.
    """
    if not models:
        raise RescoreError("at least one model required")
    if not nbest:
        raise RescoreError("empty n-best set")
    if model_ids is None:
        model_ids = [f"model_{i}" for i in range(len(models))]
    if len(model_ids) != len(models):
        raise RescoreError("one id per model required")
    keys, encoded, unscorable = split_hypotheses(nbest, models[0].vocab,
                                                 models[0].max_len)
    per_model = [sentence_logprob_batch(model, encoded) if keys else []
                 for model in models]
    return assemble_table(keys, per_model, unscorable, model_ids)


def interpolate(a: ScoreTable, b: ScoreTable, weight: float) -> ScoreTable:
    """Log-linear combination of the mean columns: weight*a + (1-weight)*b."""
    if not 0.0 <= weight <= 1.0:
        raise RescoreError("interpolation weight must be in [0, 1]")
    if set(a.keys()) != set(b.keys()):
        raise RescoreError("score tables cover different hypotheses")
    out = ScoreTable([MEAN_COLUMN])
    for utt, idx in a.keys():
        va = a.get(utt, idx)
        vb = b.get(utt, idx)
        out.set(utt, idx, MEAN_COLUMN, weight * va + (1.0 - weight) * vb)
    return out


def select_best(nbest: dict[str, list[Hypothesis]], scores: ScoreTable,
                acoustic_weight: float = 0.0) -> dict[str, Hypothesis]:
    """Per utterance, the hypothesis maximizing lm_score plus
    acoustic_weight * acoustic_score; ties break to the lowest index."""
    best: dict[str, Hypothesis] = {}
    for utt, hyps in nbest.items():
        ranked = []
        for hyp in hyps:
            total = scores.get(utt, hyp.index)
            if acoustic_weight != 0.0 and hyp.acoustic is not None:
                total += acoustic_weight * hyp.acoustic
            ranked.append((-total, hyp.index, hyp))
        ranked.sort(key=lambda r: (r[0], r[1]))
        best[utt] = ranked[0][2]
    return best


@dataclass
class WerReport:
    wer: float
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int


def _align_counts(ref: list[str], hyp: list[str]) -> tuple[int, int, int]:
    """Levenshtein alignment with unit costs; returns (sub, del, ins)."""
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i, j] = min(sub, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, dels, ins


def wer(hyps: dict[str, str], refs: dict[str, str]) -> WerReport:
    """Word error rate over matching utterance keys."""
    if not refs:
        raise RescoreError("empty reference set")
    if set(hyps.keys()) != set(refs.keys()):
        missing = set(refs.keys()) ^ set(hyps.keys())
        raise RescoreError(f"utterance keys differ, e.g. {sorted(missing)[:3]}")
    subs = dels = ins = words = 0
    for utt in sorted(refs):
        r = refs[utt].split()
        h = hyps[utt].split()
        s, d, i = _align_counts(r, h)
        subs += s
        dels += d
        ins += i
        words += len(r)
    if words == 0:
        raise RescoreError("reference set has no words")
    return WerReport(wer=(subs + dels + ins) / words, substitutions=subs,
                     deletions=dels, insertions=ins, ref_words=words)


# --------------------------------------------------------------------------
# score-table CSV round trip
# --------------------------------------------------------------------------

def write_score_csv(table: ScoreTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("utt_id,hyp_index,model_id,logprob\n")
        for (utt, idx) in sorted(table.keys()):
            row = table.scores[(utt, idx)]
            for mid in table.model_ids:
                if mid in row:
                    fh.write(f"{utt},{idx},{mid},{format(row[mid], '.17g')}\n")


def read_score_csv(path) -> ScoreTable:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "utt_id,hyp_index,model_id,logprob":
        raise RescoreError(f"bad score CSV header in {path}")
    model_ids: list[str] = []
    table = ScoreTable([])
    for line in lines[1:]:
        if not line:
            continue
        utt, idx, mid, value = line.split(",")
        if mid not in model_ids:
            model_ids.append(mid)
        table.set(utt, int(idx), mid, float(value))
    table.model_ids = model_ids
    return table


def write_selection(best: dict[str, Hypothesis], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt in sorted(best):
            fh.write(f"{utt} {best[utt].text}".rstrip() + "\n")
