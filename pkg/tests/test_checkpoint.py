import struct

import numpy as np
import pytest

from framework.checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from framework.errors import CheckpointError
from framework.layers import Linear
from framework.module import RngState


def _records():
    return {
        "w": np.arange(6, dtype=np.float32).reshape(2, 3),
        "b": np.array([1.5, -2.5]),
        "scalar": np.array(3.0),
    }


def test_records_and_metadata_survive_a_write(tmp_path):
    path = save_checkpoint(tmp_path / "run" / "a.omk", _records(), {"iteration": 7, "config": {"net": {}}})
    records, metadata = load_checkpoint(path)
    assert metadata == {"iteration": 7, "config": {"net": {}}}
    assert list(records) == ["w", "b", "scalar"]
    assert records["w"].dtype == np.float32 and records["b"].dtype == np.float64
    np.testing.assert_array_equal(records["w"], _records()["w"])
    assert records["scalar"].shape == ()
    assert not (tmp_path / "run" / "a.omk.tmp").exists()


def test_header_layout(tmp_path):
    path = save_checkpoint(tmp_path / "a.omk", {"x": np.zeros(2)}, {})
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    version, meta_len = struct.unpack("<II", blob[8:16])
    assert version == FORMAT_VERSION
    assert blob[16 : 16 + meta_len] == b"{}"


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.omk"
    path.write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(path)


def test_unknown_version(tmp_path):
    path = save_checkpoint(tmp_path / "a.omk", {}, {})
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", FORMAT_VERSION + 1)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_truncated_payload(tmp_path):
    path = save_checkpoint(tmp_path / "a.omk", _records(), {})
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "absent.omk")


def test_unsupported_dtype_is_refused(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "a.omk", {"i": np.arange(3)}, {})


def test_incompatible_state_lists_every_difference(f64):
    layer = Linear(3, 2, RngState(0))
    layer.registry()
    state = {"weight": np.zeros((4, 2)), "extra": np.zeros(1)}
    with pytest.raises(CheckpointError) as info:
        layer.load_state_dict(state)
    message = info.value.detail
    assert "missing: bias" in message
    assert "unexpected: extra" in message
    assert "weight: checkpoint (4, 2) vs network (3, 2)" in message
