"""Synthetic translation tasks with known word order and exact alignments.

A source sentence is a random sequence of content tokens ``s<j>``. Its
translation maps every token to ``t<(j + offset) mod n>`` and moves source
position ``i`` to target position ``perm(i)``. The emitted alignment links
each source position to where it lands, so the reordering rules recover the
target order exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import assign_target_keys, format_alignments, parse_alignments, reorder_source
from .config import SPECIALS, ConfigError
from .data import Bitext, Vocab

FAMILIES = ("identity", "reverse", "rotate", "random")


@dataclass
class SyntheticTask:
    vocab: int = 64  # includes the reserved specials
    min_len: int = 5
    max_len: int = 12
    family: str = "reverse"
    rotate_k: int = 1
    offset: int = 7
    seed: int = 0
    model_max_len: int = 64

    def __post_init__(self):
        if self.vocab <= len(SPECIALS):
            raise ConfigError(f"vocab must exceed the {len(SPECIALS)} reserved ids, got {self.vocab}")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(f"bad length range {self.min_len}..{self.max_len}")
        if self.max_len + 1 > self.model_max_len:
            raise ConfigError(f"length {self.max_len} does not fit model max_len {self.model_max_len}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown permutation family {self.family!r}")

    @property
    def n_content(self) -> int:
        return self.vocab - len(SPECIALS)


def permutation(task: SyntheticTask, length: int, rng: np.random.Generator) -> list[int]:
    """Target position of every source position."""
    if task.family == "identity":
        return list(range(length))
    if task.family == "reverse":
        return [length - 1 - i for i in range(length)]
    if task.family == "rotate":
        return [(i + task.rotate_k) % length for i in range(length)]
    return rng.permutation(length).tolist()


def make_synthetic(task: SyntheticTask, n_pairs: int, seed: int | None = None):
    """Return ``(sources, targets, alignment_lines)`` as token lists / strings."""
    rng = np.random.default_rng(task.seed if seed is None else seed)
    n = task.n_content
    sources, targets, aligns = [], [], []
    for _ in range(n_pairs):
        length = int(rng.integers(task.min_len, task.max_len + 1))
        content = rng.integers(0, n, size=length).tolist()
        perm = permutation(task, length, rng)
        tgt = [""] * length
        for i, j in enumerate(content):
            tgt[perm[i]] = f"t{(j + task.offset) % n}"
        sources.append([f"s{j}" for j in content])
        targets.append(tgt)
        aligns.append(format_alignments((i, perm[i]) for i in range(length)))
    return sources, targets, aligns


def vocabularies(task: SyntheticTask) -> tuple[Vocab, Vocab]:
    n = task.n_content
    return Vocab(f"s{j}" for j in range(n)), Vocab(f"t{j}" for j in range(n))


def to_bitext(task: SyntheticTask, sources, targets, aligns, reorder_target: bool = False) -> Bitext:
    """Id-encode a synthetic corpus and attach supervision keys.

    With ``reorder_target`` the target side is the source in gold target order
    (training data for the reordering model).
    """
    sv, tv = vocabularies(task)
    keys = [
        assign_target_keys(parse_alignments(a), len(s), len(t))
        for s, t, a in zip(sources, targets, aligns)
    ]
    src = [sv.encode(s) for s in sources]
    if reorder_target:
        tgt = [sv.encode(reorder_source(s, k)) for s, k in zip(sources, keys)]
        return Bitext(src, tgt, sv, sv, keys)
    return Bitext(src, [tv.encode(t) for t in targets], sv, tv, keys)


def gold_reordered(task: SyntheticTask, sources, targets, aligns) -> list[list[str]]:
    out = []
    for s, t, a in zip(sources, targets, aligns):
        keys = assign_target_keys(parse_alignments(a), len(s), len(t))
        out.append(reorder_source(s, keys))
    return out
