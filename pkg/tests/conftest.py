import json
from pathlib import Path

import numpy as np
import pytest

from m2lab.encoder import EncoderConfig, EncoderModel

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "m2lab" / "schemas"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    """The gradient-check configuration: one layer, d=16, S=16, V=32."""
    return EncoderConfig(vocab_size=32, d_model=16, n_layers=1, max_seq_len=16, monarch_b=4, seed=3)


@pytest.fixture(scope="session")
def small_model():
    cfg = EncoderConfig(d_model=16, n_layers=2, max_seq_len=128, monarch_b=4, seed=5)
    return EncoderModel.initialize(cfg)


def load_schema(name):
    return json.loads((SCHEMA_DIR / f"{name}.schema.json").read_text())


ACCEPTANCE = []     # (number, title, passed, seconds, detail), filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, seconds, detail in sorted(ACCEPTANCE):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{verdict}  {number:>2}. {title} ({seconds:.1f} s) {detail}")
