"""Two-pass translation: a reordering model feeds a translation model."""

from __future__ import annotations

from typing import Sequence

from .decoding import beam_search
from .model import Transformer


def run_2pt(
    reorder_model: Transformer,
    translate_model: Transformer,
    src_ids: Sequence[int],
    beam: int = 5,
) -> list[int]:
    """Reorder ``src_ids`` with the first model, translate the result with the second."""
    if reorder_model.cfg.vocab_tgt != translate_model.cfg.vocab_src:
        raise ValueError(
            f"reordering output vocabulary ({reorder_model.cfg.vocab_tgt}) does not match "
            f"translation input vocabulary ({translate_model.cfg.vocab_src})"
        )
    reordered = beam_search(reorder_model, src_ids, beam)
    if not reordered:
        # an empty reordering cannot be encoded; fall back to the original order
        reordered = list(src_ids)
    reordered = reordered[: translate_model.cfg.max_len]
    return beam_search(translate_model, reordered, beam)


def translate_2pt(
    reorder_model: Transformer,
    translate_model: Transformer,
    sources: Sequence[Sequence[int]],
    beam: int = 5,
) -> list[list[int]]:
    return [run_2pt(reorder_model, translate_model, s, beam) for s in sources]
