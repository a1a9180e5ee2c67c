"""Vocabularies, parallel corpora and deterministic length-bucketed batching."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .alignment import TargetKeys, supervising_positions
from .config import BOS, EOS, PAD, SPECIALS, UNK


class InputError(ValueError):
    """Bad or inconsistent input files."""


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocab":
        """Frequency-ordered vocabulary; ties broken alphabetically."""
        counts = Counter(t for s in sentences for t in s)
        return cls(t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(SPECIALS)]) != SPECIALS:
            raise InputError(f"{path}: vocabulary must start with {SPECIALS}")
        return cls(lines[len(SPECIALS):])


@dataclass
class Bitext:
    """Token-id sentence pairs plus optional per-source-token target keys."""

    src: list[list[int]]
    tgt: list[list[int]]
    src_vocab: Vocab
    tgt_vocab: Vocab
    keys: list[TargetKeys] | None = None

    def __post_init__(self):
        if len(self.src) != len(self.tgt):
            raise InputError(f"{len(self.src)} source vs {len(self.tgt)} target sentences")
        if self.keys is not None:
            if len(self.keys) != len(self.src):
                raise InputError(f"{len(self.keys)} supervision lines for {len(self.src)} sentences")
            for n, (s, k) in enumerate(zip(self.src, self.keys)):
                if len(s) != len(k):
                    raise InputError(f"line {n + 1}: {len(k)} keys for {len(s)} source tokens")

    def __len__(self) -> int:
        return len(self.src)

    def subset(self, idx: Sequence[int]) -> "Bitext":
        return Bitext(
            [self.src[i] for i in idx],
            [self.tgt[i] for i in idx],
            self.src_vocab,
            self.tgt_vocab,
            None if self.keys is None else [self.keys[i] for i in idx],
        )


@dataclass
class Batch:
    src: np.ndarray  # [B, S]
    tgt_in: np.ndarray  # [B, T+1], BOS-prefixed
    tgt_out: np.ndarray  # [B, T+1], EOS-terminated
    supervision: np.ndarray | None = None  # [B, S, d]
    indices: list[int] = field(default_factory=list)

    @property
    def n_tokens(self) -> int:
        return int((self.tgt_out != PAD).sum())


def pad_batch(seqs: Sequence[Sequence[int]], length: int | None = None) -> np.ndarray:
    length = length or max(len(s) for s in seqs)
    out = np.full((len(seqs), length), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def make_batch(bitext: Bitext, idx: Sequence[int], pe_table: np.ndarray | None = None) -> Batch:
    src = pad_batch([bitext.src[i] for i in idx])
    tgt_in = pad_batch([[BOS] + bitext.tgt[i] for i in idx])
    tgt_out = pad_batch([bitext.tgt[i] + [EOS] for i in idx])
    sup = None
    if pe_table is not None and bitext.keys is not None:
        sup = np.zeros(src.shape + (pe_table.shape[1],), dtype=pe_table.dtype)
        for row, i in enumerate(idx):
            sup[row, : len(bitext.src[i])] = supervising_positions(bitext.keys[i], pe_table)
    return Batch(src, tgt_in, tgt_out, sup, list(idx))


def bucket_batches(lengths: Sequence[int], max_tokens: int, rng: np.random.Generator) -> list[list[int]]:
    """Group sentence indices of similar length under a padded-token budget.

    Sentences are shuffled, stably sorted by length, cut into batches whose
    padded size stays within ``max_tokens``, and the batch order is shuffled.
    """
    order = rng.permutation(len(lengths))
    order = sorted(order.tolist(), key=lambda i: lengths[i])
    batches, cur, cur_max = [], [], 0
    for i in order:
        new_max = max(cur_max, lengths[i])
        if cur and new_max * (len(cur) + 1) > max_tokens:
            batches.append(cur)
            cur, new_max = [], lengths[i]
        cur.append(i)
        cur_max = new_max
    if cur:
        batches.append(cur)
    return [batches[j] for j in rng.permutation(len(batches))]


def read_corpus(path: str | Path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh]


def write_corpus(path: str | Path, sentences: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(" ".join(s) + "\n")
