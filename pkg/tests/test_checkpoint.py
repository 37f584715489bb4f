import numpy as np
import pytest

from m2lab.checkpoint import MAGIC, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from m2lab.encoder import EncoderConfig, EncoderModel
from m2lab.errors import DataError


@pytest.fixture(scope="module")
def model():
    return EncoderModel.initialize(EncoderConfig(d_model=16, monarch_b=4, n_layers=2, max_seq_len=64, seed=8))


def test_byte_exact_round_trip(model, tmp_path):
    blob = to_bytes(model)
    assert blob.startswith(MAGIC)
    assert to_bytes(from_bytes(blob)) == blob
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == model.config
    for name, values in model.arrays().items():
        assert np.array_equal(values, back.arrays()[name])


def test_bad_magic(model):
    with pytest.raises(DataError):
        from_bytes(b"NOTACKPT" + to_bytes(model)[8:])


def test_truncated_payload(model):
    with pytest.raises(DataError):
        from_bytes(to_bytes(model)[:-8])
