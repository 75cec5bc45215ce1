import numpy as np
import pytest

from sctnet.archive import ArchiveError, load_archive, save_archive


def test_round_trip_exact(tmp_path, rng):
    tensors = {
        "a.weight": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "a.bias": rng.standard_normal(4).astype(np.float64),
        "counts": np.arange(7, dtype=np.int64),
        "flags": np.array([0, 255, 3], dtype=np.uint8),
    }
    meta = {"mode": "artistic", "preprocessing": {"mean": [0.5, 0.5, 0.5], "std": [1, 1, 1]}}
    path = tmp_path / "weights.scta"
    save_archive(path, tensors, meta)
    loaded, loaded_meta = load_archive(path)
    assert loaded_meta == meta
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert loaded[name].dtype == tensors[name].dtype
        np.testing.assert_array_equal(loaded[name], tensors[name])


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ArchiveError, match="magic"):
        load_archive(path)


def test_truncated_payload(tmp_path, rng):
    path = tmp_path / "w.scta"
    save_archive(path, {"big": rng.standard_normal(100)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-50])
    with pytest.raises(ArchiveError, match="truncated"):
        load_archive(path)


def test_missing_file():
    with pytest.raises(ArchiveError, match="cannot read"):
        load_archive("/nonexistent/path.scta")
