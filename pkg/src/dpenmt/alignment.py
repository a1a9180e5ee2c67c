"""Word-alignment handling: Pharaoh parsing, target-order keys, pre-reordering.

Alignments are 0-based ``src-tgt`` links, one sentence pair per line, as
written by fast_align. Each source token gets a *key*: the target position it
should move to, or ``None`` when it has no link.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence, TypeVar

import numpy as np

from .tensor import Tensor

T = TypeVar("T")

Link = tuple[int, int]
# A target key per source token; ``None`` marks an unaligned token.
TargetKeys = list["int | None"]

UNALIGNED_MARK = "-"


class AlignmentError(ValueError):
    """Malformed alignment text or links that do not fit the sentence pair."""


def parse_alignments(line: str) -> frozenset[Link]:
    """Parse one Pharaoh line such as ``"0-0 1-2 2-1"`` into a link set."""
    links = set()
    for pos, tok in enumerate(line.split()):
        src, sep, tgt = tok.partition("-")
        if not sep or not src.isdigit() or not tgt.isdigit():
            raise AlignmentError(f"malformed alignment token {tok!r} at position {pos}")
        links.add((int(src), int(tgt)))
    return frozenset(links)


def format_alignments(links: Iterable[Link]) -> str:
    return " ".join(f"{s}-{t}" for s, t in sorted(links))


def assign_target_keys(links: Iterable[Link], src_len: int, tgt_len: int) -> TargetKeys:
    """Resolve every source token to a target position.

    One-to-many links keep the smallest target index, keys past the end of the
    source are clamped to ``src_len - 1`` and tokens without links stay
    unaligned. Many-to-one groups are handled later by the stable sort in
    :func:`reorder_source`.
    """
    keys: TargetKeys = [None] * src_len
    for s, t in links:
        if not (0 <= s < src_len and 0 <= t < tgt_len):
            raise AlignmentError(
                f"link {s}-{t} outside sentence pair of lengths {src_len}/{tgt_len}"
            )
        if keys[s] is None or t < keys[s]:
            keys[s] = t
    last = src_len - 1
    return [None if k is None else min(k, last) for k in keys]


def reorder_source(tokens: Sequence[T], keys: Sequence[int | None]) -> list[T]:
    """Move aligned tokens into target order; unaligned ones keep their slot."""
    if len(tokens) != len(keys):
        raise ValueError(f"{len(tokens)} tokens but {len(keys)} keys")
    free_slots = [i for i, k in enumerate(keys) if k is not None]
    movers = sorted(free_slots, key=lambda i: (keys[i], i))
    out = list(tokens)
    for slot, src in zip(free_slots, movers):
        out[slot] = tokens[src]
    return out


def supervising_positions(keys: Sequence[int | None], pe_table: Tensor | np.ndarray) -> np.ndarray:
    """Rows of the position table each source token is trained to reproduce.

    Aligned token ``i`` with key ``j`` gets row ``j``; unaligned tokens get
    their own row ``i``.
    """
    table = pe_table.data if isinstance(pe_table, Tensor) else np.asarray(pe_table)
    rows = [i if k is None else k for i, k in enumerate(keys)]
    if rows and max(rows) >= table.shape[0]:
        raise ValueError(f"key {max(rows)} exceeds position table length {table.shape[0]}")
    return table[np.asarray(rows, dtype=np.int64)]


def format_keys(keys: Sequence[int | None]) -> str:
    return " ".join(UNALIGNED_MARK if k is None else str(k) for k in keys)


def parse_keys(line: str) -> TargetKeys:
    out: TargetKeys = []
    for tok in line.split():
        if tok == UNALIGNED_MARK:
            out.append(None)
        elif tok.isdigit():
            out.append(int(tok))
        else:
            raise AlignmentError(f"bad supervision key {tok!r}")
    return out


def read_lines(path) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            yield line.rstrip("\n")
