"""Corpus BLEU-4 and exact-match rate over whitespace-tokenised sentences."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

Sentence = Sequence[str] | Sequence[int]


def _ngrams(tokens: Sentence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _as_tokens(s) -> Sequence:
    return s.split() if isinstance(s, str) else s


def bleu_stats(hypotheses: Sequence[Sentence], references: Sequence[Sentence], max_n: int = 4):
    """Clipped n-gram matches, n-gram totals, hypothesis and reference lengths."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _as_tokens(hyp), _as_tokens(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu(hypotheses: Sequence[Sentence], references: Sequence[Sentence], max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 100]; zero when any n-gram precision is zero."""
    matches, totals, c, r = bleu_stats(hypotheses, references, max_n)
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = min(0.0, 1.0 - r / c)
    return 100.0 * math.exp(log_prec + bp)


def exact_match(hypotheses: Sequence[Sentence], references: Sequence[Sentence]) -> float:
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("exact_match of an empty corpus")
    hits = sum(list(_as_tokens(h)) == list(_as_tokens(r)) for h, r in zip(hypotheses, references))
    return hits / len(hypotheses)
