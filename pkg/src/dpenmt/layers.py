"""Transformer building blocks on top of :mod:`dpenmt.tensor`.

Layers are plain functions over a parameter mapping; a layer named ``p``
reads ``params[p + ".wq"]`` and so on. Activations are ``[batch, len, d]``.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

NEG_INF = -1e9

Params = Mapping[str, Tensor]
Dropper = Callable[[Tensor], Tensor]


def sinusoidal_pe(max_len: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Standard sin/cos position table, ``[max_len, d_model]``."""
    if d_model % 2:
        raise ValueError(f"sinusoidal encoding needs an even d_model, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    rate = np.power(10000.0, np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.empty((max_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(pos / rate)
    table[:, 1::2] = np.cos(pos / rate)
    return table.astype(dtype)


def enrich(embeddings: Tensor, pe_table: np.ndarray | Tensor) -> Tensor:
    """Word embeddings plus the position rows for their slots (``w_i + p_i``)."""
    table = pe_table.data if isinstance(pe_table, Tensor) else pe_table
    L = embeddings.shape[-2]
    if L > table.shape[0]:
        raise ValueError(f"sequence length {L} exceeds position table length {table.shape[0]}")
    rows = np.broadcast_to(table[:L].astype(embeddings.dtype), embeddings.shape)
    return T.add(embeddings, Tensor(np.ascontiguousarray(rows)))


def linear(x: Tensor, params: Params, name: str) -> Tensor:
    return T.add(T.matmul(x, params[name + ".w"]), params[name + ".b"])


def norm(x: Tensor, params: Params, name: str, eps: float) -> Tensor:
    return T.layer_norm(x, params[name + ".g"], params[name + ".b"], eps)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    B, L, d = x.shape
    return T.transpose(T.reshape(x, (B, L, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    B, H, L, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (B, L, H * dh))


def attention_weights(q: Tensor, k: Tensor, mask: np.ndarray | None) -> Tensor:
    """Softmax of scaled dot products; ``mask`` is true where attention is blocked."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: query {q.shape} and key {k.shape} widths differ")
    scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = T.masked_fill(scores, mask, NEG_INF)
    return T.softmax(scores, axis=-1)


def multi_head_attention(
    q_in: Tensor,
    kv_in: Tensor,
    params: Params,
    name: str,
    n_heads: int,
    mask: np.ndarray | None,
) -> Tensor:
    if q_in.shape[-1] % n_heads:
        raise DimensionError(f"width {q_in.shape[-1]} not divisible into {n_heads} heads")
    q = split_heads(linear(q_in, params, name + ".q"), n_heads)
    k = split_heads(linear(kv_in, params, name + ".k"), n_heads)
    v = split_heads(linear(kv_in, params, name + ".v"), n_heads)
    ctx = T.matmul(attention_weights(q, k, mask), v)
    return linear(merge_heads(ctx), params, name + ".o")


def feed_forward(x: Tensor, params: Params, name: str) -> Tensor:
    return linear(T.relu(linear(x, params, name + ".ff1")), params, name + ".ff2")


def no_drop(x: Tensor) -> Tensor:
    return x


def encoder_layer(
    x: Tensor, params: Params, name: str, n_heads: int, key_mask, eps: float, drop: Dropper = no_drop
) -> Tensor:
    # post-norm residual blocks, as in the original Transformer
    h = multi_head_attention(x, x, params, name + ".self", n_heads, key_mask)
    x = norm(T.add(x, drop(h)), params, name + ".ln1", eps)
    h = feed_forward(x, params, name)
    return norm(T.add(x, drop(h)), params, name + ".ln2", eps)


def decoder_layer(
    y: Tensor,
    memory: Tensor,
    params: Params,
    name: str,
    n_heads: int,
    self_mask,
    cross_mask,
    eps: float,
    drop: Dropper = no_drop,
) -> Tensor:
    h = multi_head_attention(y, y, params, name + ".self", n_heads, self_mask)
    y = norm(T.add(y, drop(h)), params, name + ".ln1", eps)
    h = multi_head_attention(y, memory, params, name + ".cross", n_heads, cross_mask)
    y = norm(T.add(y, drop(h)), params, name + ".ln2", eps)
    h = feed_forward(y, params, name)
    return norm(T.add(y, drop(h)), params, name + ".ln3", eps)


def key_padding_mask(pad: np.ndarray) -> np.ndarray:
    """``[B, L]`` pad flags -> ``[B, 1, 1, L]`` attention block mask."""
    return pad[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.ones((length, length), dtype=bool), k=1)[None, None]
