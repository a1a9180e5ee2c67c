import pytest

from dpenmt.config import ConfigError, ModelConfig, RunConfig, load_configs, parse_kv_lines, to_kv


def test_parse_comments_and_blanks():
    raw = parse_kv_lines(["# header", "", "d_model = 32  # width", "lam=0.3"])
    assert raw == {"d_model": "32", "lam": "0.3"}


def test_parse_malformed_line_number():
    with pytest.raises(ConfigError, match="line 2"):
        parse_kv_lines(["a=1", "oops"])


def test_load_splits_model_and_run():
    model, run = load_configs({"d_model": "32", "n_heads": "4", "updates": "10", "lam": "0.3"})
    assert (model.d_model, model.n_heads, model.lam, run.updates) == (32, 4, 0.3, 10)


def test_lambda_alias():
    model, _ = load_configs({"lambda": "0.7"})
    assert model.lam == 0.7


def test_unknown_key():
    with pytest.raises(ConfigError, match="bogus"):
        load_configs({"bogus": "1"})


def test_bad_value():
    with pytest.raises(ConfigError, match="d_model"):
        load_configs({"d_model": "wide"})


@pytest.mark.parametrize("kw", [dict(d_model=10, n_heads=4), dict(d_model=7, n_heads=1), dict(lam=1.5),
                                dict(dpe_mode="sideways"), dict(dropout=1.0), dict(n_enc_layers=0)])
def test_model_validation(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


@pytest.mark.parametrize("kw", [dict(updates=0), dict(interval=0), dict(beam=0), dict(lr_scale=0.0)])
def test_run_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_kv_roundtrip():
    model = ModelConfig(d_model=32, dpe_layers=2, lam=0.3, dropout=0.1)
    run = RunConfig(seed=9, updates=77)
    back_model, back_run = load_configs(parse_kv_lines((to_kv(model) + to_kv(run)).splitlines()))
    assert back_model == model and back_run == run
