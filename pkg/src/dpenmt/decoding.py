"""Greedy and beam-search decoding with average-log-prob length normalisation.

Hypotheses are scored by their summed token log-probabilities divided by
their length (EOS included). Finished hypotheses keep competing for beam
slots, so a beam of width one is exactly greedy decoding. PAD, BOS and UNK
are never generated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import BOS, EOS, PAD, UNK
from .model import EncoderState, Transformer
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

BANNED = (PAD, BOS, UNK)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool

    @property
    def score(self) -> float:
        return self.logprob / max(len(self.tokens), 1)


def default_max_out(src_len: int) -> int:
    return 2 * src_len + 8


def _resolve_max_out(model: Transformer, src_len: int, max_out: int | None) -> int:
    # BOS plus max_out - 1 emitted tokens must fit the position table
    return min(max_out or default_max_out(src_len), model.cfg.max_len)


def _encode_one(model: Transformer, src_ids: Sequence[int]) -> EncoderState:
    with no_grad():
        return model.encode(np.asarray([list(src_ids)], dtype=np.int64))


def _tile(enc: EncoderState, n: int) -> EncoderState:
    return EncoderState(
        Tensor(np.repeat(enc.states.data, n, axis=0)), np.repeat(enc.src_pad_mask, n, axis=0)
    )


def _step_logprobs(model: Transformer, enc: EncoderState, prefixes: list[tuple[int, ...]]) -> np.ndarray:
    arr = np.asarray([(BOS,) + p for p in prefixes], dtype=np.int64)
    tiled = enc if len(prefixes) == 1 else _tile(enc, len(prefixes))
    lp = model.next_token_logprobs(tiled, arr)
    lp[:, list(BANNED)] = -np.inf
    return lp


def greedy(model: Transformer, src_ids: Sequence[int], max_out: int | None = None) -> list[int]:
    max_out = _resolve_max_out(model, len(src_ids), max_out)
    enc = _encode_one(model, src_ids)
    out: tuple[int, ...] = ()
    for _ in range(max_out):
        tok = int(np.argmax(_step_logprobs(model, enc, [out])[0]))
        out += (tok,)
        if tok == EOS:
            return list(out[:-1])
    log.warning("greedy decoding hit the %d-token cap without EOS", max_out)
    return list(out)


def beam_search_hyps(
    model: Transformer, src_ids: Sequence[int], beam: int = 5, max_out: int | None = None
) -> list[Hypothesis]:
    """All finished hypotheses found, best first."""
    if beam < 1:
        raise ValueError("beam width must be >= 1")
    max_out = _resolve_max_out(model, len(src_ids), max_out)
    enc = _encode_one(model, src_ids)
    live = [Hypothesis((), 0.0, False)]
    done: dict[tuple[int, ...], Hypothesis] = {}
    for step in range(max_out):
        active = [h for h in live if not h.finished]
        if not active:
            break
        lp = _step_logprobs(model, enc, [h.tokens for h in active])
        pool = [h for h in live if h.finished]
        last = step == max_out - 1
        for h, row in zip(active, lp):
            for tok in np.flatnonzero(np.isfinite(row)):
                tok = int(tok)
                pool.append(Hypothesis(h.tokens + (tok,), h.logprob + float(row[tok]), tok == EOS or last))
        pool.sort(key=lambda h: (-h.score, h.tokens))
        live = pool[:beam]
        for h in live:
            if h.finished:
                done.setdefault(h.tokens, h)
        best_done = max((h.score for h in done.values()), default=-np.inf)
        # extensions only add non-positive terms, so s / max_out bounds any live prefix
        bound = max((h.logprob / max_out for h in live if not h.finished), default=-np.inf)
        if best_done >= bound:
            break
    if not done:  # unreachable unless every token is banned
        done = {h.tokens: h for h in live}
    return sorted(done.values(), key=lambda h: (-h.score, h.tokens))


def strip_eos(tokens: Sequence[int]) -> list[int]:
    return list(tokens[:-1]) if tokens and tokens[-1] == EOS else list(tokens)


def beam_search(model: Transformer, src_ids: Sequence[int], beam: int = 5, max_out: int | None = None) -> list[int]:
    best = beam_search_hyps(model, src_ids, beam, max_out)[0]
    if best.tokens and best.tokens[-1] != EOS:
        log.warning("beam search hit the %d-token cap without EOS", _resolve_max_out(model, len(src_ids), max_out))
    return strip_eos(best.tokens)


def sequence_logprob(model: Transformer, src_ids: Sequence[int], tokens: Sequence[int]) -> float:
    """Teacher-forced log-probability of ``tokens`` (a brute-force scoring path)."""
    with no_grad():
        enc = model.encode(np.asarray([list(src_ids)], dtype=np.int64))
        logits = model.decode(np.asarray([[BOS] + list(tokens[:-1])], dtype=np.int64), enc).data[0]
    logits = logits.astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return float(sum(logp[t, tok] for t, tok in enumerate(tokens)))


def translate(
    model: Transformer, sources: Sequence[Sequence[int]], beam: int = 5, max_out: int | None = None
) -> list[list[int]]:
    if beam == 1:
        return [greedy(model, s, max_out) for s in sources]
    return [beam_search(model, s, beam, max_out) for s in sources]
