import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpenmt.checkpoint import Checkpoint, CheckpointError, average_checkpoints
from dpenmt.config import ModelConfig, RunConfig
from dpenmt.data import Bitext, InputError, bucket_batches
from dpenmt.synthetic import SyntheticTask, make_synthetic, to_bitext
from dpenmt.tensor import Tensor, no_grad
from dpenmt.training import (
    TrainState,
    adam_step,
    clip_grad_norm,
    lr_schedule,
    model_from_checkpoint,
    parse_metrics_line,
    train,
)


class TestSchedule:
    def test_crossover(self):
        assert lr_schedule(400, 64, 400) == pytest.approx(64**-0.5 * 400**-0.5, rel=1e-15)

    def test_base_value(self):
        assert lr_schedule(4000, 512, 4000) == pytest.approx(6.988e-4, abs=5e-7)

    def test_first_step(self):
        assert lr_schedule(1, 512, 4000) == pytest.approx(512**-0.5 * 4000**-1.5, rel=1e-15)

    def test_step_zero(self):
        with pytest.raises(ValueError):
            lr_schedule(0, 512, 4000)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 500))
    def test_shape(self, warmup):
        up = [lr_schedule(s, 64, warmup) for s in range(1, warmup + 1)]
        down = [lr_schedule(s, 64, warmup) for s in range(warmup, warmup + 200)]
        assert all(a < b for a, b in zip(up, up[1:]))
        assert all(a > b for a, b in zip(down, down[1:]))


class TestAdam:
    def test_zero_grads(self):
        p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        state = TrainState.create(p)
        adam_step(state, {"w": np.zeros(2)}, 0.1)
        assert p["w"].data.tolist() == [1.0, -2.0]
        assert state.m["w"].tolist() == [0.0, 0.0] and state.step == 1

    def test_first_step_is_lr_sized(self):
        # t=1 with zero moments: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
        state = TrainState.create(p)
        adam_step(state, {"w": np.array([3.7])}, 0.01)
        assert p["w"].data[0] == pytest.approx(-0.01, rel=1e-8)

    def test_missing_grad(self):
        p = {"w": Tensor(np.zeros(1), requires_grad=True)}
        with pytest.raises(ValueError, match="no gradient"):
            adam_step(TrainState.create(p), {"w": None}, 0.1)

    def test_clip(self):
        grads = {"a": np.array([3.0], np.float32), "b": np.array([4.0], np.float32)}
        assert clip_grad_norm(grads, 1.0) == pytest.approx(5.0)
        assert math.hypot(grads["a"][0], grads["b"][0]) == pytest.approx(1.0, rel=1e-5)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, rng, tmp_path):
        params = {
            "a": rng.normal(size=(3, 4)).astype(np.float32),
            "bias": rng.normal(size=(7,)).astype(np.float32),
            "ünï": np.array([[[np.float32(-0.0), np.float32(1e-38)]]]),
        }
        ck = Checkpoint(params, step=42, config="d_model=8\n")
        path = tmp_path / "x.dpec"
        ck.save(path)
        back = Checkpoint.load(path)
        assert back.step == 42 and back.config == "d_model=8\n"
        assert list(back.params) == list(params)
        for k in params:
            assert back.params[k].tobytes() == params[k].tobytes()
        assert back.to_bytes() == path.read_bytes()

    def test_layout_header(self):
        buf = Checkpoint({"w": np.ones((2,), np.float32)}, 5).to_bytes()
        assert buf[:4] == b"DPEC"
        assert int.from_bytes(buf[4:8], "little") == 1

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(b"NOPE" + bytes(40))

    def test_average_identical(self, rng):
        p = {"w": rng.normal(size=(3,)).astype(np.float32)}
        avg = average_checkpoints([Checkpoint(dict(p), s) for s in (1, 2, 3)])
        assert np.array_equal(avg.params["w"], p["w"]) and avg.step == 3

    def test_average_mean(self):
        a = Checkpoint({"w": np.array([1.0], np.float32)}, 10)
        b = Checkpoint({"w": np.array([3.0], np.float32)}, 20)
        avg = average_checkpoints([a, b])
        assert avg.params["w"].tolist() == [2.0] and avg.step == 20

    def test_average_name_mismatch(self):
        a = Checkpoint({"w": np.ones(1, np.float32)}, 1)
        b = Checkpoint({"w": np.ones(1, np.float32), "v": np.ones(1, np.float32)}, 2)
        with pytest.raises(CheckpointError, match="names differ"):
            average_checkpoints([a, b])

    def test_average_shape_mismatch(self):
        a = Checkpoint({"w": np.ones(1, np.float32)}, 1)
        b = Checkpoint({"w": np.ones(2, np.float32)}, 2)
        with pytest.raises(CheckpointError):
            average_checkpoints([a, b])

    def test_average_ignores_name_order(self, rng):
        names = ["x", "y", "z"]
        ckpts = [{n: rng.normal(size=(2, 2)).astype(np.float32) for n in names} for _ in range(3)]
        fwd = average_checkpoints([Checkpoint(c, i) for i, c in enumerate(ckpts)])
        rev = average_checkpoints([Checkpoint({n: c[n] for n in reversed(names)}, i) for i, c in enumerate(ckpts)])
        for n in names:
            assert np.array_equal(fwd.params[n], rev.params[n])


def test_bucketing_is_seeded_and_budgeted():
    lengths = list(np.random.default_rng(0).integers(1, 20, size=200))
    a = bucket_batches(lengths, 64, np.random.default_rng(3))
    b = bucket_batches(lengths, 64, np.random.default_rng(3))
    assert a == b
    assert sorted(i for batch in a for i in batch) == list(range(200))
    assert all(max(lengths[i] for i in batch) * len(batch) <= 64 for batch in a)


def _toy(n=20, keys=True):
    task = SyntheticTask(vocab=12, min_len=3, max_len=5, family="reverse")
    s, t, a = make_synthetic(task, n, seed=9)
    bt = to_bitext(task, s, t, a)
    if not keys:
        bt.keys = None
    return task, bt


def _toy_cfg(**kw):
    base = dict(d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, ff_dim=32,
                vocab_src=12, vocab_tgt=12, max_len=16)
    base.update(kw)
    return ModelConfig(**base)


def test_smoke_training_reduces_loss():
    _, bt = _toy()
    steps = []
    run = RunConfig(seed=1, updates=50, warmup=10, max_tokens=200, interval=10)
    train(_toy_cfg(), run, bt, dev_bleu=False, on_step=lambda s, m: steps.append(m["translation_loss"]))
    assert steps[-1] < steps[0]


def test_metrics_cadence_and_files(tmp_path):
    _, bt = _toy()
    run = RunConfig(seed=2, updates=23, warmup=5, max_tokens=200, interval=5, beam=2, dev_size=5)
    res = train(_toy_cfg(dpe_layers=2, lam=0.3), run, bt, out_dir=tmp_path)
    lines = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert lines[0] == "# seed=2"
    assert len(lines) - 1 == 23 // 5 == len(res.metrics)
    rows = [parse_metrics_line(l) for l in lines[1:]]
    assert [r["step"] for r in rows] == [5, 10, 15, 20]
    for r in rows:
        assert r["total_loss"] == pytest.approx(0.3 * r["translation_loss"] + 0.7 * r["order_loss"], rel=1e-6)
    assert sorted(p.name for p in tmp_path.glob("checkpoint_*.dpec")) == [
        f"checkpoint_{s}.dpec" for s in (10, 15, 20, 5)
    ]
    avg = Checkpoint.load(tmp_path / "averaged.dpec")
    expected = average_checkpoints([Checkpoint.load(tmp_path / f"checkpoint_{s}.dpec") for s in (5, 10, 15, 20)])
    assert avg.to_bytes() == expected.to_bytes()
    assert model_from_checkpoint(avg).num_parameters() == res.model.num_parameters()


def test_training_is_deterministic():
    _, bt = _toy()
    run = RunConfig(seed=4, updates=15, warmup=5, max_tokens=200, interval=5, dev_size=4, beam=2)
    a = train(_toy_cfg(dpe_layers=2, lam=0.5), run, bt)
    b = train(_toy_cfg(dpe_layers=2, lam=0.5), run, bt)
    assert a.final.to_bytes() == b.final.to_bytes()
    assert a.metrics == b.metrics


def test_lambda_one_bypass_matches_baseline():
    _, bt = _toy()
    run = RunConfig(seed=6, updates=20, warmup=5, max_tokens=200, interval=10)
    base, dpe = [], []
    train(_toy_cfg(), run, bt, dev_bleu=False, on_step=lambda s, m: base.append(m["translation_loss"]))
    train(_toy_cfg(dpe_layers=2, lam=1.0, dpe_mode="bypass"), run, bt, dev_bleu=False,
          on_step=lambda s, m: dpe.append(m["translation_loss"]))
    assert base == dpe


def test_dpe_needs_supervision():
    _, bt = _toy(keys=False)
    with pytest.raises(InputError):
        train(_toy_cfg(dpe_layers=2, lam=0.5), RunConfig(updates=1), bt)


def test_supervision_count_mismatch():
    _, bt = _toy()
    with pytest.raises(InputError):
        Bitext(bt.src, bt.tgt, bt.src_vocab, bt.tgt_vocab, bt.keys[:-1])


def test_dropout_training_is_seeded_and_eval_is_clean():
    _, bt = _toy()
    run = RunConfig(seed=5, updates=10, warmup=5, max_tokens=200, interval=5, dev_size=4, beam=2)
    a = train(_toy_cfg(dropout=0.2), run, bt, dev_bleu=False)
    b = train(_toy_cfg(dropout=0.2), run, bt, dev_bleu=False)
    plain = train(_toy_cfg(), run, bt, dev_bleu=False)
    assert a.final.to_bytes() == b.final.to_bytes()
    assert a.final.to_bytes() != plain.final.to_bytes()
    # evaluation runs without recording gradients, so dropout stays off
    model = model_from_checkpoint(a.final)
    model.dropout_rng = np.random.default_rng(0)
    src = np.array([bt.src[0]])
    enc1, enc2 = model.encode(src), model.encode(src)
    assert not np.array_equal(enc1.states.data, enc2.states.data)
    with no_grad():
        assert np.array_equal(model.encode(src).states.data, model.encode(src).states.data)
