from pathlib import Path

import pytest

from dpenmt.checkpoint import Checkpoint
from dpenmt.cli import main
from dpenmt.synthetic import SyntheticTask, make_synthetic


def _write(path: Path, lines) -> Path:
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return path


@pytest.fixture
def corpus(tmp_path):
    task = SyntheticTask(vocab=12, min_len=3, max_len=5, family="reverse")
    s, t, a = make_synthetic(task, 24, seed=3)
    return (
        _write(tmp_path / "train.src", [" ".join(x) for x in s]),
        _write(tmp_path / "train.tgt", [" ".join(x) for x in t]),
        _write(tmp_path / "train.align", a),
    )


TINY = ["d_model=16", "n_heads=2", "n_enc_layers=1", "n_dec_layers=1", "ff_dim=32",
        "updates=12", "warmup=4", "interval=4", "max_tokens=200", "dev_size=4", "beam=2", "max_len=16"]


def _preprocess(tmp_path, corpus, name="data"):
    src, tgt, align = corpus
    out = tmp_path / name
    assert main(["preprocess", "--src", str(src), "--tgt", str(tgt), "--align", str(align),
                 "--dpe", "--out", str(out)]) == 0
    return out


def test_preprocess_outputs(tmp_path, corpus):
    out = _preprocess(tmp_path, corpus)
    for name in ("train.src.ids", "train.tgt.ids", "train.keys", "train.reordered", "train.reordered.ids"):
        assert len((out / name).read_text().splitlines()) == 24
    again = _preprocess(tmp_path, corpus, "data2")
    for f in out.iterdir():
        assert f.read_bytes() == (again / f.name).read_bytes()


def test_preprocess_dpe_needs_alignments(tmp_path, corpus, capsys):
    src, tgt, _ = corpus
    assert main(["preprocess", "--src", str(src), "--tgt", str(tgt), "--dpe", "--out", str(tmp_path / "o")]) == 2
    assert "--align" in capsys.readouterr().err


def test_line_count_mismatch(tmp_path, corpus, capsys):
    src, _, align = corpus
    short = _write(tmp_path / "short.tgt", ["t1 t2"])
    assert main(["preprocess", "--src", str(src), "--tgt", str(short), "--align", str(align),
                 "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "24 lines" in err and "1 lines" in err


def test_bad_alignment_reports_line(tmp_path, corpus, capsys):
    src, tgt, align = corpus
    lines = align.read_text().splitlines()
    lines[2] = "0-x"
    bad = _write(tmp_path / "bad.align", lines)
    assert main(["reorder", "--src", str(src), "--tgt", str(tgt), "--align", str(bad),
                 "--out-reordered", str(tmp_path / "r"), "--out-keys", str(tmp_path / "k")]) == 3
    assert ":3:" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["evaluate", "--hyp", "x"]) == 2


def test_unknown_config_key(tmp_path, corpus):
    data = _preprocess(tmp_path, corpus)
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "m"), "--set", "bogus=1"]) == 2


def test_missing_file_is_input_error(tmp_path):
    assert main(["evaluate", "--hyp", str(tmp_path / "nope"), "--ref", str(tmp_path / "nope")]) == 3


def test_reorder_reverses(tmp_path, corpus):
    src, tgt, align = corpus
    assert main(["reorder", "--src", str(src), "--tgt", str(tgt), "--align", str(align),
                 "--out-reordered", str(tmp_path / "r"), "--out-keys", str(tmp_path / "k")]) == 0
    reordered = (tmp_path / "r").read_text().splitlines()
    assert reordered == [" ".join(l.split()[::-1]) for l in src.read_text().splitlines()]


def test_evaluate(tmp_path, capsys):
    h = _write(tmp_path / "h", ["a b c d"])
    r = _write(tmp_path / "r", ["a b c d e"])
    assert main(["evaluate", "--hyp", str(h), "--ref", str(r)]) == 0
    assert capsys.readouterr().out.strip() == "BLEU=77.88"
    assert main(["evaluate", "--hyp", str(h), "--ref", str(h), "--metric", "exact"]) == 0
    assert capsys.readouterr().out.strip() == "exact_match=1.0000"


def test_train_translate_average(tmp_path, corpus):
    data = _preprocess(tmp_path, corpus)
    model_dir = tmp_path / "m"
    assert main(["train", "--data", str(data), "--out", str(model_dir),
                 "--set", *TINY, "dpe_layers=2", "lam=0.5"]) == 0
    ckpts = sorted(model_dir.glob("checkpoint_*.dpec"))
    assert len(ckpts) == 3
    assert (model_dir / "config.txt").read_text().startswith("# seed=1\n")
    out = tmp_path / "hyp"
    assert main(["translate", "--checkpoint", str(model_dir / "averaged.dpec"), "--data", str(data),
                 "--input", str(corpus[0]), "--output", str(out), "--beam", "2"]) == 0
    assert len(out.read_text().splitlines()) == 24
    assert main(["average", "--out", str(tmp_path / "avg.dpec"), *map(str, ckpts)]) == 0
    assert Checkpoint.load(tmp_path / "avg.dpec").to_bytes() == (model_dir / "averaged.dpec").read_bytes()


def test_two_pass_translate(tmp_path, corpus):
    data = _preprocess(tmp_path, corpus)
    for task in ("reorder", "oracle"):
        assert main(["train", "--data", str(data), "--task", task, "--out", str(tmp_path / task),
                     "--set", *TINY]) == 0
    out = tmp_path / "hyp"
    assert main(["translate", "--checkpoint", str(tmp_path / "oracle" / "averaged.dpec"),
                 "--reorder-checkpoint", str(tmp_path / "reorder" / "averaged.dpec"), "--data", str(data),
                 "--input", str(corpus[0]), "--output", str(out), "--beam", "2"]) == 0
    assert len(out.read_text().splitlines()) == 24


def _experiment(tmp_path, variants, extra=()):
    cfg = _write(tmp_path / "exp.cfg", [
        f"variants={variants}", "seeds=1", "vocab=12", "min_len=3", "max_len=5",
        "n_train=24", "n_dev=4", "n_test=6", *TINY, *extra,
    ])
    return main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "exp")])


def _report(tmp_path):
    lines = (tmp_path / "exp" / "report.tsv").read_text().splitlines()
    header = lines[1].split("\t")
    return [dict(zip(header, l.split("\t"))) for l in lines[2:]]


def test_experiment_without_variants(tmp_path):
    assert _experiment(tmp_path, "") == 2


def test_experiment_parameter_counts(tmp_path):
    assert _experiment(tmp_path, "baseline,dpe:0.5") == 0
    rows = _report(tmp_path)
    assert [r["variant"] for r in rows] == ["baseline", "dpe:0.5"]
    assert int(rows[1]["params"]) > int(rows[0]["params"])


def test_experiment_lambda_sweep(tmp_path, capsys):
    assert _experiment(tmp_path, "dpe:0.1,dpe:0.3,dpe:0.5,dpe:0.7") == 0
    rows = _report(tmp_path)
    assert [float(r["lambda"]) for r in rows] == [0.1, 0.3, 0.5, 0.7]
    assert len(capsys.readouterr().out.splitlines()) == 4


def test_variant_spellings():
    from dpenmt.config import ConfigError
    from dpenmt.experiment import Variant

    assert Variant.parse("oracle-reorder") == Variant("oracle")
    assert Variant.parse("dpe") == Variant("dpe", 0.5)
    assert Variant.parse("dpe:0.3").label == "dpe:0.3"
    for bad in ("dpe:x", "dpe:2", "transformer"):
        with pytest.raises(ConfigError):
            Variant.parse(bad)
