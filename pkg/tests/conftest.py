import numpy as np
import pytest

from dpenmt.config import ModelConfig
from dpenmt.model import Transformer


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**kw) -> ModelConfig:
    base = dict(
        d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, ff_dim=16,
        vocab_src=11, vocab_tgt=11, max_len=16, label_smoothing=0.0,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(seed=0, dtype=np.float64, **kw) -> Transformer:
    return Transformer(tiny_config(**kw), seed=seed, dtype=dtype)


# criterion number -> (status, title, detail), filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {status}: {title}: {detail}")
