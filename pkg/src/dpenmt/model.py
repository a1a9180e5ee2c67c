"""Encoder-decoder Transformer with optional DPE layers in front of the encoder."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .dpe import dpe_forward, order_loss, total_loss
from .layers import (
    causal_mask,
    decoder_layer,
    encoder_layer,
    enrich,
    key_padding_mask,
    linear,
    sinusoidal_pe,
)
from .tensor import Tensor


@dataclass
class EncoderState:
    states: Tensor  # [B, S, d]
    src_pad_mask: np.ndarray  # [B, S], true at padding
    r: Tensor | None = None  # DPE output, when the model has DPE layers


@dataclass
class Losses:
    total: Tensor
    translation: Tensor
    order: Tensor | None


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # one stream per parameter name, so adding DPE layers leaves the rest untouched
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def _param_specs(cfg: ModelConfig) -> Iterator[tuple[str, tuple[int, ...], str]]:
    d, ff = cfg.d_model, cfg.ff_dim

    def lin(name, n_in, n_out):
        yield name + ".w", (n_in, n_out), "xavier"
        yield name + ".b", (n_out,), "zeros"

    def ln(name):
        yield name + ".g", (d,), "ones"
        yield name + ".b", (d,), "zeros"

    def attn(name):
        for part in ("q", "k", "v", "o"):
            yield from lin(f"{name}.{part}", d, d)

    def enc_block(name):
        yield from attn(name + ".self")
        yield from ln(name + ".ln1")
        yield from lin(name + ".ff1", d, ff)
        yield from lin(name + ".ff2", ff, d)
        yield from ln(name + ".ln2")

    yield "src_embed", (cfg.vocab_src, d), "embed"
    yield "tgt_embed", (cfg.vocab_tgt, d), "embed"
    for i in range(cfg.dpe_layers):
        yield from enc_block(f"dpe.{i}")
    for i in range(cfg.n_enc_layers):
        yield from enc_block(f"enc.{i}")
    for i in range(cfg.n_dec_layers):
        name = f"dec.{i}"
        yield from attn(name + ".self")
        yield from ln(name + ".ln1")
        yield from attn(name + ".cross")
        yield from ln(name + ".ln2")
        yield from lin(name + ".ff1", d, ff)
        yield from lin(name + ".ff2", ff, d)
        yield from ln(name + ".ln3")
    yield from lin("out", d, cfg.vocab_tgt)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {name: shape for name, shape, _ in _param_specs(cfg)}


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    params = {}
    for name, shape, kind in _param_specs(cfg):
        rng = _param_rng(seed, name)
        if kind == "embed":
            arr = rng.uniform(-0.1, 0.1, size=shape)
        elif kind == "xavier":
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, size=shape)
        elif kind == "ones":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


class Transformer:
    """Baseline NMT model; with ``cfg.dpe_layers > 0`` it becomes the DPE model."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32, params=None):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = params if params is not None else init_params(cfg, seed, dtype)
        self.pe_table = sinusoidal_pe(cfg.max_len, cfg.d_model, self.dtype)
        # set by the training loop; dropout only fires while gradients are recorded
        self.dropout_rng: np.random.Generator | None = None

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -------------------------------------------------------------- forward

    def _drop(self, x: Tensor) -> Tensor:
        if self.dropout_rng is None or not T.is_grad_enabled():
            return x
        return T.dropout(x, self.cfg.dropout, self.dropout_rng)

    def _embed(self, ids: np.ndarray, table: str) -> Tensor:
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise ValueError(f"expected a non-empty [batch, len] id array, got shape {ids.shape}")
        if ids.shape[1] > self.cfg.max_len:
            raise ValueError(f"length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        w = T.scale(T.embedding(self.params[table], ids), math.sqrt(self.cfg.d_model))
        return enrich(w, self.pe_table)

    def encode(self, src_ids: np.ndarray) -> EncoderState:
        cfg = self.cfg
        src_ids = np.asarray(src_ids)
        pad = src_ids == cfg.pad_id
        x = self._drop(self._embed(src_ids, "src_embed"))
        r = None
        if cfg.dpe_layers:
            r = dpe_forward(x, pad, self.params, cfg.dpe_layers, cfg.n_heads, cfg.ln_eps, self._drop)
            if cfg.dpe_mode == "replace":
                x = r
            elif cfg.dpe_mode == "residual":
                x = T.add(x, r)
        mask = key_padding_mask(pad)
        for i in range(cfg.n_enc_layers):
            x = encoder_layer(x, self.params, f"enc.{i}", cfg.n_heads, mask, cfg.ln_eps, self._drop)
        return EncoderState(x, pad, r)

    def decode(self, tgt_in: np.ndarray, enc: EncoderState) -> Tensor:
        """Teacher-forced logits ``[B, T, vocab_tgt]`` for decoder inputs ``tgt_in``."""
        cfg = self.cfg
        tgt_in = np.asarray(tgt_in)
        y = self._drop(self._embed(tgt_in, "tgt_embed"))
        L = tgt_in.shape[1]
        self_mask = causal_mask(L) | key_padding_mask(tgt_in == cfg.pad_id)
        cross_mask = key_padding_mask(enc.src_pad_mask)
        for i in range(cfg.n_dec_layers):
            y = decoder_layer(
                y, enc.states, self.params, f"dec.{i}", cfg.n_heads, self_mask, cross_mask, cfg.ln_eps,
                self._drop,
            )
        return linear(y, self.params, "out")

    def losses(
        self,
        src_ids: np.ndarray,
        tgt_in: np.ndarray,
        tgt_out: np.ndarray,
        supervision: np.ndarray | None = None,
    ) -> Losses:
        """Translation, order and blended losses for one padded batch.

        ``supervision`` holds the ``[B, S, d]`` target-position rows; it is
        required when the model has DPE layers.
        """
        cfg = self.cfg
        enc = self.encode(src_ids)
        logits = self.decode(tgt_in, enc)
        tgt_out = np.asarray(tgt_out)
        l_tr = T.cross_entropy(logits, tgt_out, tgt_out == cfg.pad_id, cfg.label_smoothing)
        l_ord = None
        if enc.r is not None:
            if supervision is None:
                raise ValueError("a DPE model needs supervision rows")
            l_ord = order_loss(enc.r, supervision.astype(self.dtype, copy=False), enc.src_pad_mask)
        lam = cfg.lam if l_ord is not None else 1.0
        return Losses(total_loss(l_tr, l_ord, lam), l_tr, l_ord)

    def next_token_logprobs(self, enc: EncoderState, prefixes: np.ndarray) -> np.ndarray:
        """Log-probabilities ``[B, V]`` of the token following each prefix."""
        with T.no_grad():
            logits = self.decode(prefixes, enc).data[:, -1, :].astype(np.float64)
        logits = logits - logits.max(axis=1, keepdims=True)
        return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
