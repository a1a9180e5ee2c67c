"""Scripted comparisons of baseline, DPE, 2PT and oracle-reordering variants.

An experiment file uses the ``key=value`` dialect. Besides any model and run
keys it accepts::

    variants=baseline,dpe:0.5,2pt,oracle     # required; oracle-reorder also works
    seeds=1,2,3
    family=reverse  vocab=64  min_len=5  max_len=12  rotate_k=1  offset=7
    data_seed=100   n_train=3000  n_test=500  n_dev=50

Every variant is trained with the same seeds and data; one report row is
written per (variant, seed) as soon as it finishes.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .config import ConfigError, ModelConfig, RunConfig, build, replace
from .data import Bitext
from .decoding import translate
from .metrics import bleu, exact_match
from .pipeline import translate_2pt
from .synthetic import SyntheticTask, make_synthetic, to_bitext
from .training import TrainResult, train

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "variant",
    "seed",
    "lambda",
    "params",
    "test_bleu",
    "reorder_exact_match",
    "translation_loss",
    "order_loss",
    "initial_order_loss",
    "seconds",
)


@dataclass
class Variant:
    kind: str  # baseline | dpe | 2pt | oracle
    lam: float = 1.0

    @property
    def label(self) -> str:
        return f"dpe:{self.lam:g}" if self.kind == "dpe" else self.kind

    @classmethod
    def parse(cls, text: str) -> "Variant":
        text = text.strip()
        if text == "oracle-reorder":
            text = "oracle"
        if text in ("baseline", "2pt", "oracle"):
            return cls(text)
        kind, _, lam = text.partition(":")
        if kind == "dpe":
            try:
                value = float(lam) if lam else 0.5
            except ValueError:
                raise ConfigError(f"bad lambda in variant {text!r}") from None
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"lambda out of [0, 1] in variant {text!r}")
            return cls("dpe", value)
        raise ConfigError(f"unknown variant {text!r}")


@dataclass
class ExperimentSpec:
    variants: list[Variant]
    seeds: list[int]
    task: SyntheticTask
    model: ModelConfig
    run: RunConfig
    data_seed: int = 100
    n_train: int = 3000
    n_test: int = 500
    n_dev: int = 50
    dpe_layers: int = 2

    @classmethod
    def from_kv(cls, raw: dict[str, str]) -> "ExperimentSpec":
        raw = dict(raw)
        variants_text = raw.pop("variants", "")
        variants = [Variant.parse(v) for v in variants_text.split(",") if v.strip()]
        if not variants:
            raise ConfigError("experiment lists no variants")
        seeds = [int(s) for s in raw.pop("seeds", "1").split(",") if s.strip()]
        extra = {}
        for key, typ in (("data_seed", int), ("n_train", int), ("n_test", int), ("n_dev", int)):
            if key in raw:
                extra[key] = typ(raw.pop(key))
        task_keys = {"family", "vocab", "min_len", "max_len", "rotate_k", "offset"}
        task_raw = {k: raw.pop(k) for k in list(raw) if k in task_keys}
        model, rest = build(ModelConfig, raw, strict=False)
        run, rest = build(RunConfig, rest, strict=False)
        if rest:
            raise ConfigError(f"unknown experiment keys: {sorted(rest)}")
        task, _ = build(SyntheticTask, {**task_raw, "model_max_len": str(model.max_len)})
        dpe_layers = model.dpe_layers or 2
        model = replace(model, vocab_src=task.vocab, vocab_tgt=task.vocab, dpe_layers=0, lam=1.0)
        return cls(variants, seeds, task, model, run, dpe_layers=dpe_layers, **extra)


@dataclass
class Datasets:
    train: Bitext
    dev: Bitext
    test: Bitext
    reorder_train: Bitext
    reorder_dev: Bitext
    reorder_test: Bitext
    oracle_train: Bitext
    oracle_dev: Bitext
    oracle_test: Bitext


def build_datasets(spec: ExperimentSpec) -> Datasets:
    total = spec.n_train + spec.n_dev + spec.n_test
    s, t, a = make_synthetic(spec.task, total, seed=spec.data_seed)
    plain = to_bitext(spec.task, s, t, a)
    reorder = to_bitext(spec.task, s, t, a, reorder_target=True)
    # oracle: gold-reordered source -> target, a monotone translation task
    oracle = Bitext(reorder.tgt, plain.tgt, plain.src_vocab, plain.tgt_vocab)
    tr = range(spec.n_train)
    dv = range(spec.n_train, spec.n_train + spec.n_dev)
    te = range(spec.n_train + spec.n_dev, total)
    return Datasets(
        plain.subset(tr), plain.subset(dv), plain.subset(te),
        reorder.subset(tr), reorder.subset(dv), reorder.subset(te),
        oracle.subset(tr), oracle.subset(dv), oracle.subset(te),
    )


@dataclass
class ExperimentResult:
    rows: list[dict] = field(default_factory=list)
    runs: dict[tuple[str, int], TrainResult] = field(default_factory=dict)


def format_row(row: dict) -> str:
    out = []
    for c in REPORT_COLUMNS:
        v = row.get(c, "")
        out.append(f"{v:.6g}" if isinstance(v, float) else str(v))
    return "\t".join(out)


def run_experiment(
    spec: ExperimentSpec,
    out_dir: str | Path | None = None,
    data: Datasets | None = None,
    keep_runs: bool = False,
) -> ExperimentResult:
    """Train and evaluate every variant for every seed, sequentially."""
    data = data or build_datasets(spec)
    out = Path(out_dir) if out_dir is not None else None
    report = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        report = open(out / "report.tsv", "w", encoding="utf-8")
        report.write(f"# seeds={','.join(map(str, spec.seeds))}\n")
        report.write("\t".join(REPORT_COLUMNS) + "\n")
    result = ExperimentResult()
    cache: dict[tuple[str, int], TrainResult] = {}

    def fit(name: str, seed: int, cfg: ModelConfig, train_data: Bitext, dev: Bitext) -> TrainResult:
        if (name, seed) not in cache:
            run = replace(spec.run, seed=seed)
            sub = out / f"{name}_seed{seed}" if out is not None else None
            log.info("training %s (seed %d)", name, seed)
            cache[(name, seed)] = train(cfg, run, train_data, dev, out_dir=sub)
        return cache[(name, seed)]

    beam = spec.run.beam
    refs = data.test.tgt
    try:
        for variant in spec.variants:
            for seed in spec.seeds:
                started = time.perf_counter()
                row = {"variant": variant.label, "seed": seed, "lambda": variant.lam, "reorder_exact_match": ""}
                if variant.kind in ("baseline", "dpe"):
                    cfg = spec.model
                    if variant.kind == "dpe":
                        cfg = replace(cfg, dpe_layers=spec.dpe_layers, lam=variant.lam)
                    res = fit(variant.label, seed, cfg, data.train, data.dev)
                    hyps = translate(res.model, data.test.src, beam)
                    row["params"] = res.model.num_parameters()
                elif variant.kind == "oracle":
                    res = fit("oracle", seed, spec.model, data.oracle_train, data.oracle_dev)
                    hyps = translate(res.model, data.oracle_test.src, beam)
                    row["params"] = res.model.num_parameters()
                else:
                    reo = fit("reorder", seed, spec.model, data.reorder_train, data.reorder_dev)
                    res = fit("oracle", seed, spec.model, data.oracle_train, data.oracle_dev)
                    reordered = translate(reo.model, data.test.src, beam)
                    row["reorder_exact_match"] = exact_match(reordered, data.reorder_test.tgt)
                    hyps = translate_2pt(reo.model, res.model, data.test.src, beam)
                    row["params"] = reo.model.num_parameters() + res.model.num_parameters()
                row["test_bleu"] = bleu(hyps, refs)
                last = res.metrics[-1] if res.metrics else {}
                row["translation_loss"] = last.get("translation_loss", float("nan"))
                row["order_loss"] = last.get("order_loss", float("nan"))
                row["initial_order_loss"] = (
                    res.initial_order_loss if res.initial_order_loss is not None else float("nan")
                )
                row["seconds"] = time.perf_counter() - started
                result.rows.append(row)
                log.info("%s", format_row(row))
                if report is not None:
                    report.write(format_row(row) + "\n")
                    report.flush()
    finally:
        if report is not None:
            report.close()
    if keep_runs:
        result.runs = cache
    return result


def summarize(rows: Sequence[dict]) -> dict[str, float]:
    """Mean test BLEU per variant label."""
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(r["variant"], []).append(r["test_bleu"])
    return {k: sum(v) / len(v) for k, v in groups.items()}
