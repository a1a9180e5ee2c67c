import pytest

from dpenmt.decoding import beam_search
from dpenmt.pipeline import run_2pt, translate_2pt
from conftest import tiny_model


def test_untrained_models_give_wellformed_output():
    reo, tr = tiny_model(seed=1), tiny_model(seed=2)
    outs = translate_2pt(reo, tr, [[4, 5, 6], [7], [8, 9, 10, 4, 5]], beam=2)
    assert len(outs) == 3
    for o in outs:
        assert all(4 <= t < 11 for t in o)


def test_empty_reordering_falls_back_to_source():
    reo, tr = tiny_model(seed=1), tiny_model(seed=2)
    reo.params["out.w"].data[:] = 0.0
    reo.params["out.b"].data[:] = 0.0
    reo.params["out.b"].data[2] = 50.0  # always EOS
    assert run_2pt(reo, tr, [4, 5, 6], beam=2) == beam_search(tr, [4, 5, 6], 2)


def test_vocab_mismatch():
    with pytest.raises(ValueError, match="vocabulary"):
        run_2pt(tiny_model(vocab_tgt=9), tiny_model(), [4])
