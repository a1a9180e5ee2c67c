"""Command-line entry point: ``dpenmt <subcommand> ...``.

Exit status: 0 success, 2 usage error, 3 input error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import alignment as al
from .checkpoint import Checkpoint, CheckpointError, average_checkpoints
from .config import ConfigError, load_configs, read_kv_file, replace, to_kv
from .data import Bitext, InputError, Vocab, read_corpus, write_corpus
from .decoding import translate
from .experiment import ExperimentSpec, run_experiment, summarize
from .metrics import bleu, exact_match
from .pipeline import translate_2pt
from .training import model_from_checkpoint, train

EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 2, 3, 4

log = logging.getLogger("dpenmt")


class UsageError(Exception):
    pass


def _lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _check_counts(named: dict[str, int]) -> None:
    if len(set(named.values())) > 1:
        detail = ", ".join(f"{k}: {v} lines" for k, v in named.items())
        raise InputError(f"line counts differ ({detail})")


def _write_ids(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(" ".join(map(str, r)) + "\n")


def _read_ids(path: Path) -> list[list[int]]:
    return [[int(x) for x in line.split()] for line in _lines(path)]


def _overrides(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for p in pairs:
        key, sep, value = p.partition("=")
        if not sep:
            raise UsageError(f"override {p!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


# ------------------------------------------------------------------ commands


def reorder_corpus(src_path, tgt_path, align_path):
    """Apply the alignment rules to a corpus; returns (sources, keys, reordered)."""
    src, tgt, aligns = read_corpus(src_path), read_corpus(tgt_path), _lines(align_path)
    _check_counts({str(src_path): len(src), str(tgt_path): len(tgt), str(align_path): len(aligns)})
    keys, reordered = [], []
    for n, (s, t, a) in enumerate(zip(src, tgt, aligns), 1):
        try:
            k = al.assign_target_keys(al.parse_alignments(a), len(s), len(t))
        except al.AlignmentError as exc:
            raise InputError(f"{align_path}:{n}: {exc}") from None
        keys.append(k)
        reordered.append(al.reorder_source(s, k))
    return src, keys, reordered


def cmd_reorder(args) -> None:
    _, keys, reordered = reorder_corpus(args.src, args.tgt, args.align)
    write_corpus(args.out_reordered, reordered)
    with open(args.out_keys, "w", encoding="utf-8") as fh:
        for k in keys:
            fh.write(al.format_keys(k) + "\n")


def cmd_preprocess(args) -> None:
    if args.dpe and not args.align:
        raise UsageError("--dpe needs an alignment file (--align)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src, tgt = read_corpus(args.src), read_corpus(args.tgt)
    counts = {args.src: len(src), args.tgt: len(tgt)}
    if args.align:
        counts[args.align] = len(_lines(args.align))
    _check_counts(counts)
    sv, tv = Vocab.build(src), Vocab.build(tgt)
    sv.save(out / "src.vocab")
    tv.save(out / "tgt.vocab")
    _write_ids(out / "train.src.ids", (sv.encode(s) for s in src))
    _write_ids(out / "train.tgt.ids", (tv.encode(t) for t in tgt))
    if args.align:
        _, keys, reordered = reorder_corpus(args.src, args.tgt, args.align)
        with open(out / "train.keys", "w", encoding="utf-8") as fh:
            for k in keys:
                fh.write(al.format_keys(k) + "\n")
        write_corpus(out / "train.reordered", reordered)
        _write_ids(out / "train.reordered.ids", (sv.encode(s) for s in reordered))
    (out / "manifest.txt").write_text(
        f"seed={args.seed}\nsentences={len(src)}\nsrc_vocab={len(sv)}\ntgt_vocab={len(tv)}\n",
        encoding="utf-8",
    )


def load_bitext(data_dir: Path, task: str) -> Bitext:
    sv, tv = Vocab.load(data_dir / "src.vocab"), Vocab.load(data_dir / "tgt.vocab")
    src = _read_ids(data_dir / "train.src.ids")
    keys_path = data_dir / "train.keys"
    keys = [al.parse_keys(line) for line in _lines(keys_path)] if keys_path.exists() else None
    if task == "translate":
        return Bitext(src, _read_ids(data_dir / "train.tgt.ids"), sv, tv, keys)
    reordered = _read_ids(data_dir / "train.reordered.ids")
    if task == "reorder":
        return Bitext(src, reordered, sv, sv, keys)
    return Bitext(reordered, _read_ids(data_dir / "train.tgt.ids"), sv, tv)


def cmd_train(args) -> None:
    raw = read_kv_file(args.config) if args.config else {}
    raw.update(_overrides(args.set))
    cfg, run = load_configs(raw)
    run = replace(run, seed=args.seed)
    data = load_bitext(Path(args.data), args.task)
    cfg = replace(cfg, vocab_src=len(data.src_vocab), vocab_tgt=len(data.tgt_vocab))
    longest = max(max(map(len, data.src)), max(map(len, data.tgt)) + 1)
    if longest > cfg.max_len:
        raise InputError(f"longest sentence ({longest}) exceeds max_len {cfg.max_len}")
    if cfg.dpe_layers and data.keys is None:
        raise InputError("DPE training needs supervision keys; preprocess with --align")
    res = train(cfg, run, data, out_dir=args.out)
    out = Path(args.out)
    (out / "config.txt").write_text(f"# seed={run.seed}\n" + to_kv(cfg) + to_kv(run), encoding="utf-8")
    print(f"trained {res.model.num_parameters()} parameters in {res.seconds:.1f}s; "
          f"averaged checkpoint: {out / 'averaged.dpec'}")


def _load_model(path):
    return model_from_checkpoint(Checkpoint.load(path))


def cmd_translate(args) -> None:
    data = Path(args.data)
    sv, tv = Vocab.load(data / "src.vocab"), Vocab.load(data / "tgt.vocab")
    model = _load_model(args.checkpoint)
    sources = [sv.encode(s) for s in read_corpus(args.input)]
    if any(not s for s in sources):
        raise InputError(f"{args.input} contains an empty line")
    if args.reorder_checkpoint:
        hyps = translate_2pt(_load_model(args.reorder_checkpoint), model, sources, args.beam)
    else:
        hyps = translate(model, sources, args.beam)
    out_vocab = sv if args.output_vocab == "src" else tv
    write_corpus(args.output, (out_vocab.decode(h) for h in hyps))


def cmd_evaluate(args) -> None:
    hyps, refs = read_corpus(args.hyp), read_corpus(args.ref)
    _check_counts({args.hyp: len(hyps), args.ref: len(refs)})
    if args.metric == "exact":
        print(f"exact_match={exact_match(hyps, refs):.4f}")
    else:
        print(f"BLEU={bleu(hyps, refs):.2f}")


def cmd_average(args) -> None:
    ckpts = [Checkpoint.load(p) for p in args.checkpoints]
    try:
        avg = average_checkpoints(ckpts)
    except CheckpointError as exc:
        raise InputError(str(exc)) from None
    avg.save(args.out)


def cmd_experiment(args) -> None:
    raw = read_kv_file(args.config)
    raw.update(_overrides(args.set))
    spec = ExperimentSpec.from_kv(raw)
    if args.seed is not None:
        spec.seeds = [args.seed]
    res = run_experiment(spec, args.out)
    for label, mean_bleu in summarize(res.rows).items():
        print(f"{label}\tmean_test_bleu={mean_bleu:.2f}")


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpenmt", description="Dynamic position encoding NMT toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("preprocess", help="vocabularies, id files, supervision keys, reordered corpus")
    s.add_argument("--src", required=True)
    s.add_argument("--tgt", required=True)
    s.add_argument("--align")
    s.add_argument("--dpe", action="store_true", help="require alignments for DPE supervision")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=1)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("reorder", help="apply alignment rules only")
    s.add_argument("--src", required=True)
    s.add_argument("--tgt", required=True)
    s.add_argument("--align", required=True)
    s.add_argument("--out-reordered", required=True)
    s.add_argument("--out-keys", required=True)
    s.set_defaults(func=cmd_reorder)

    s = sub.add_parser("train", help="train a baseline, DPE, reordering or oracle model")
    s.add_argument("--config")
    s.add_argument("--data", required=True, help="preprocess output directory")
    s.add_argument("--task", choices=("translate", "reorder", "oracle"), default="translate")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="beam-search decode a source file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--reorder-checkpoint", help="run two-pass translation with this reordering model")
    s.add_argument("--data", required=True, help="directory holding src.vocab / tgt.vocab")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--output-vocab", choices=("tgt", "src"), default="tgt")
    s.add_argument("--beam", type=int, default=5)
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("evaluate", help="score hypotheses against references")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--metric", choices=("bleu", "exact"), default="bleu")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("average", help="average checkpoints")
    s.add_argument("--out", required=True)
    s.add_argument("checkpoints", nargs="+")
    s.set_defaults(func=cmd_average)

    s = sub.add_parser("experiment", help="train and compare variants on a synthetic task")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(name)s %(message)s",
        )
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        # bad config keys or values are reported like usage errors
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, al.AlignmentError, CheckpointError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("command failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
