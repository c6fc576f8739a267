import numpy as np
import pytest

from brsm.checkpoint import CheckpointError, load_checkpoint, pack_optimizer, save_checkpoint, unpack_optimizer
from brsm.learning import Adam


def test_round_trip(tmp_path):
    path = tmp_path / "c.npz"
    arrays = {"w": np.arange(6.0).reshape(2, 3), "i": np.array([1, 2])}
    save_checkpoint(path, header={"steps": 5}, arrays=arrays)
    header, back = load_checkpoint(path)
    assert header["steps"] == 5 and header["dtype"] == "float64"
    for k, v in arrays.items():
        np.testing.assert_array_equal(back[k], v)


def test_rejects_foreign_or_corrupt_files(tmp_path):
    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(junk)
    other = tmp_path / "other.npz"
    np.savez(other, header=np.frombuffer(b'{"format": "x", "version": 1}', dtype=np.uint8))
    with pytest.raises(CheckpointError):
        load_checkpoint(other)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")


def test_optimizer_round_trip(tmp_path):
    opt = Adam(lr=0.01)
    p = {"w": np.ones(3)}
    opt.step(p, {"w": np.array([1.0, -1.0, 0.5])})
    arrays, scalars = pack_optimizer("opt", opt)
    path = tmp_path / "o.npz"
    save_checkpoint(path, header={"opt": scalars}, arrays=arrays)
    header, back = load_checkpoint(path)
    clone = Adam()
    unpack_optimizer("opt", clone, back, header["opt"])
    q = {"w": p["w"].copy()}
    g = {"w": np.array([0.2, 0.1, -0.3])}
    opt.step(p, g)
    clone.step(q, g)
    np.testing.assert_array_equal(p["w"], q["w"])
