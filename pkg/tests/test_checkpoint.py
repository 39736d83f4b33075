"""Checkpoint container: round trips and malformed-file rejection."""

import numpy as np
import pytest

from heightbins.checkpoint import load_checkpoint, save_checkpoint
from heightbins.errors import DataError


def sample_tensors(rng):
    return {
        "backbone.enc.0.weight": rng.standard_normal((4, 3, 3, 3)),
        "head.bias": rng.standard_normal(7),
        "scalar": np.array(2.5),
    }


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = sample_tensors(rng)
    meta = {"seed": 3, "levels": ["F5"], "note": "unit"}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert list(loaded) == list(tensors)
    for name in tensors:
        np.testing.assert_array_equal(loaded[name], tensors[name])
        assert loaded[name].shape == tensors[name].shape


def test_header_is_plain_text(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.ones((2, 2))}, {"k": 1})
    head = path.read_bytes().split(b"\nend ")[0].decode()
    assert head.startswith("HBCKPT1")
    assert "tensor w (2,2) 0" in head


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"NOTACKPT\nrest")
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.ones(4)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(path)


def test_offset_past_payload_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.ones(4)})
    blob = path.read_bytes().replace(b"tensor w (4) 0", b"tensor w (4) 8")
    path.write_bytes(blob)
    with pytest.raises(DataError, match="exceeds payload"):
        load_checkpoint(path)


def test_missing_end_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"HBCKPT1\nmeta {}\ntensor w (1) 0\n")
    with pytest.raises(DataError, match="end"):
        load_checkpoint(path)


def test_garbled_shape_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.ones(4)})
    blob = path.read_bytes().replace(b"(4)", b"[4]")
    path.write_bytes(blob)
    with pytest.raises(DataError, match="shape"):
        load_checkpoint(path)
