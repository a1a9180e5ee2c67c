"""Dynamic position encoding: pre-encoder layers trained toward target order.

The DPE stack reads enriched source embeddings and emits refined rows ``r``.
An auxiliary regression loss pulls each ``r_i`` toward the sinusoidal row of
the target position its word aligns to, and the training objective blends
that loss with the translation loss.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ConfigError
from .layers import Dropper, Params, encoder_layer, key_padding_mask, no_drop
from .tensor import DimensionError, Tensor


def dpe_forward(
    enriched: Tensor,
    pad_mask: np.ndarray,
    params: Params,
    n_layers: int,
    n_heads: int,
    eps: float = 1e-5,
    drop: Dropper = no_drop,
) -> Tensor:
    """Run the DPE self-attention layers over ``[B, S, d]`` enriched embeddings."""
    if n_layers < 1:
        raise ConfigError("dpe_forward called on a model without DPE layers")
    mask = key_padding_mask(pad_mask)
    x = enriched
    for layer in range(n_layers):
        x = encoder_layer(x, params, f"dpe.{layer}", n_heads, mask, eps, drop)
    return x


def order_loss(r: Tensor, supervision: np.ndarray | Tensor, pad_mask: np.ndarray | None = None) -> Tensor:
    """Mean over real tokens of the per-token MSE between ``r`` and supervision.

    Accepts one sentence ``[S, d]`` or a batch ``[B, S, d]``; for a batch each
    sentence is averaged over its own length first, then sentences are
    averaged. Pad positions are ignored.
    """
    sup = supervision if isinstance(supervision, Tensor) else Tensor(np.asarray(supervision, dtype=r.dtype))
    if r.shape != sup.shape:
        raise DimensionError(f"order_loss: r {r.shape} vs supervision {sup.shape}")
    if r.ndim == 2:
        if pad_mask is None:
            return T.mse(r, sup)
        r3, sup3 = T.reshape(r, (1,) + r.shape), T.reshape(sup, (1,) + sup.shape)
        return order_loss(r3, sup3, np.asarray(pad_mask)[None])
    B, S, d = r.shape
    real = np.ones((B, S), dtype=bool) if pad_mask is None else ~np.asarray(pad_mask, dtype=bool)
    lengths = real.sum(axis=1, keepdims=True)
    if (lengths == 0).any():
        raise ValueError("order_loss: a sentence has no real tokens")
    weights = real / (lengths * B * d)
    w = Tensor(np.broadcast_to(weights[:, :, None], r.shape).astype(r.dtype))
    diff = T.sub(r, sup)
    return T.sum(T.mul(T.mul(diff, diff), w))


def total_loss(l_translation: Tensor, l_order: Tensor | None, lam: float) -> Tensor:
    """``lam * translation + (1 - lam) * order``."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    if l_order is None:
        if lam != 1.0:
            raise ConfigError("an order loss is required unless lambda == 1")
        return l_translation
    return T.add(T.scale(l_translation, lam), T.scale(l_order, 1.0 - lam))
