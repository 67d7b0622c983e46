"""Checkpoint format: bit-exact round trips and validation."""

import numpy as np
import pytest

from conftest import make_params, tiny_config
from moodcap.checkpoint import load_checkpoint, save_checkpoint
from moodcap.data import Vocabulary
from moodcap.errors import ParseError
from moodcap.model import Variant


def vocab20():
    extra = [f"w{i}" for i in range(16)]
    return Vocabulary(["<pad>", "<start>", "<end>", "<unk>"] + extra)


class TestRoundTrip:
    @pytest.mark.parametrize("variant", list(Variant))
    def test_values_bit_exact(self, tmp_path, variant):
        cfg = tiny_config(variant=variant)
        params = make_params(cfg, seed=21)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, vocab20())
        loaded, loaded_cfg, loaded_vocab = load_checkpoint(path)
        assert loaded_cfg == cfg
        assert loaded_vocab.words == vocab20().words
        assert loaded.trainable == params.trainable
        assert set(loaded.values) == set(params.values)
        for name, arr in params.values.items():
            np.testing.assert_array_equal(loaded.values[name], arr)

    def test_save_is_deterministic(self, tmp_path):
        cfg = tiny_config()
        params = make_params(cfg, seed=4)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, params, vocab20())
        save_checkpoint(p2, params, vocab20())
        assert p1.read_bytes() == p2.read_bytes()

    def test_second_generation_roundtrip_bytes_identical(self, tmp_path):
        cfg = tiny_config()
        params = make_params(cfg, seed=5)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, params, vocab20())
        loaded, _, vocab = load_checkpoint(p1)
        save_checkpoint(p2, loaded, vocab)
        assert p1.read_bytes() == p2.read_bytes()


class TestValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(ParseError, match="magic|not a checkpoint"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        cfg = tiny_config()
        params = make_params(cfg, seed=6)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, vocab20())
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ParseError, match="truncated|trailing"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        cfg = tiny_config()
        params = make_params(cfg, seed=7)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, vocab20())
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(ParseError, match="version"):
            load_checkpoint(path)
