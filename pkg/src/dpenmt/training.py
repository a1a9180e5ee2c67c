"""Deterministic training: Adam with inverse-sqrt warmup, validation, averaging."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .checkpoint import Checkpoint, average_checkpoints, from_params
from .config import ModelConfig, RunConfig, build, parse_kv_lines, to_kv
from .data import Bitext, InputError, bucket_batches, make_batch
from .decoding import translate
from .metrics import bleu
from .model import Transformer, param_shapes
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("step", "translation_loss", "order_loss", "total_loss", "dev_bleu")


def lr_schedule(step: int, d_model: int, warmup: int) -> float:
    """``d^-0.5 * min(step^-0.5, step * warmup^-1.5)``; peaks at ``step == warmup``."""
    if step < 1:
        raise ValueError("learning-rate schedule is defined from step 1")
    return d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


@dataclass
class TrainState:
    params: dict[str, Tensor]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0

    @classmethod
    def create(cls, params: dict[str, Tensor], seed: int = 0) -> "TrainState":
        return cls(
            params,
            {k: np.zeros_like(p.data) for k, p in params.items()},
            {k: np.zeros_like(p.data) for k, p in params.items()},
            0,
            seed,
        )


def adam_step(
    state: TrainState,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> TrainState:
    """One in-place bias-corrected Adam update; returns ``state``."""
    missing = [k for k in state.params if grads.get(k) is None]
    if missing:
        raise ValueError(f"no gradient for parameters {missing[:5]}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in state.params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
    return state


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = np.float32(max_norm / (total + 1e-6))
        for g in grads.values():
            g *= factor
    return total


@dataclass
class TrainResult:
    model: Transformer  # averaged over the last checkpoints
    final: Checkpoint  # raw parameters at the last update
    averaged: Checkpoint
    checkpoints: list[Checkpoint]
    metrics: list[dict] = field(default_factory=list)
    initial_order_loss: float | None = None  # dev order loss before the first update
    seconds: float = 0.0


def _batches(bitext: Bitext, max_tokens: int, rng: np.random.Generator) -> Iterator[list[int]]:
    lengths = [max(len(s), len(t) + 1) for s, t in zip(bitext.src, bitext.tgt)]
    while True:
        yield from bucket_batches(lengths, max_tokens, rng)


def evaluate_losses(model: Transformer, bitext: Bitext) -> dict[str, float]:
    """Dev losses from a single forward pass over the whole set."""
    batch = make_batch(bitext, range(len(bitext)), model.pe_table if model.cfg.dpe_layers else None)
    with no_grad():
        losses = model.losses(batch.src, batch.tgt_in, batch.tgt_out, batch.supervision)
    return {
        "translation_loss": losses.translation.item(),
        "order_loss": losses.order.item() if losses.order is not None else float("nan"),
        "total_loss": losses.total.item(),
    }


def evaluate_bleu(model: Transformer, bitext: Bitext, beam: int = 5) -> float:
    hyps = translate(model, bitext.src, beam=beam)
    return bleu(hyps, bitext.tgt)


def format_metrics_line(row: dict) -> str:
    return "\t".join(
        str(row["step"]) if c == "step" else f"{row[c]:.9g}" for c in METRICS_COLUMNS
    )


def parse_metrics_line(line: str) -> dict:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != len(METRICS_COLUMNS):
        raise ValueError(f"bad metrics line {line!r}")
    row = {c: float(v) for c, v in zip(METRICS_COLUMNS, parts)}
    row["step"] = int(row["step"])
    return row


def train(
    cfg: ModelConfig,
    run: RunConfig,
    train_data: Bitext,
    dev_data: Bitext | None = None,
    out_dir: str | Path | None = None,
    dev_bleu: bool = True,
    on_step: Callable[[int, dict], None] | None = None,
) -> TrainResult:
    """Train a model and average its last ``run.avg_last`` validation checkpoints.

    Supervision keys must be present on ``train_data`` exactly when the model
    has DPE layers. Checkpoints and the metrics log go to ``out_dir`` if given.
    """
    if len(train_data) == 0:
        raise InputError("empty training corpus")
    if cfg.dpe_layers > 0 and train_data.keys is None:
        raise InputError("a DPE model needs supervision keys for the training corpus")
    started = time.perf_counter()
    rng = np.random.default_rng(run.seed)
    model = Transformer(cfg, seed=run.seed)
    if cfg.dropout > 0:
        model.dropout_rng = np.random.default_rng([run.seed, 1])
    state = TrainState.create(model.params, run.seed)
    pe = model.pe_table if cfg.dpe_layers else None
    if dev_data is None:
        dev_data = train_data.subset(range(min(run.dev_size, len(train_data))))
    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.tsv", "w", encoding="utf-8")
        metrics_fh.write(f"# seed={run.seed}\n")
    cfg_text = to_kv(cfg)
    checkpoints: list[Checkpoint] = []
    metrics: list[dict] = []
    initial_order = None
    if cfg.dpe_layers:
        initial_order = evaluate_losses(model, dev_data)["order_loss"]
    try:
        batches = _batches(train_data, run.max_tokens, rng)
        for step in range(1, run.updates + 1):
            batch = make_batch(train_data, next(batches), pe)
            model.zero_grad()
            losses = model.losses(batch.src, batch.tgt_in, batch.tgt_out, batch.supervision)
            losses.total.backward()
            grads = {k: p.grad for k, p in model.params.items()}
            clip_grad_norm(grads, run.clip_norm)
            lr = run.lr_scale * lr_schedule(step, cfg.d_model, run.warmup)
            adam_step(state, grads, lr)
            if on_step is not None:
                on_step(step, {"translation_loss": losses.translation.item(),
                               "order_loss": None if losses.order is None else losses.order.item(),
                               "total_loss": losses.total.item(), "lr": lr})
            if step % run.interval == 0:
                row = {"step": step, **evaluate_losses(model, dev_data)}
                row["dev_bleu"] = evaluate_bleu(model, dev_data, run.beam) if dev_bleu else float("nan")
                metrics.append(row)
                log.info("step %d  %s", step, format_metrics_line(row))
                ckpt = from_params(model.params, step, cfg_text)
                checkpoints.append(ckpt)
                if out is not None:
                    metrics_fh.write(format_metrics_line(row) + "\n")
                    metrics_fh.flush()
                    ckpt.save(out / f"checkpoint_{step}.dpec")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    final = from_params(model.params, run.updates, cfg_text)
    averaged = average_checkpoints(checkpoints[-run.avg_last:]) if checkpoints else final
    if out is not None:
        averaged.save(out / "averaged.dpec")
    return TrainResult(
        model=model_from_checkpoint(averaged, cfg),
        final=final,
        averaged=averaged,
        checkpoints=checkpoints,
        metrics=metrics,
        initial_order_loss=initial_order,
        seconds=time.perf_counter() - started,
    )


def model_from_checkpoint(ckpt: Checkpoint, cfg: ModelConfig | None = None) -> Transformer:
    if cfg is None:
        cfg, _ = build(ModelConfig, parse_kv_lines(ckpt.config.splitlines()))
    shapes = param_shapes(cfg)
    if set(shapes) != set(ckpt.params):
        raise InputError("checkpoint parameters do not match the model configuration")
    for k, shape in shapes.items():
        if ckpt.params[k].shape != shape:
            raise InputError(f"parameter {k!r} has shape {ckpt.params[k].shape}, expected {shape}")
    params = {k: Tensor(ckpt.params[k].copy(), requires_grad=True) for k in shapes}
    return Transformer(cfg, params=params)
