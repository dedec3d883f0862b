"""Checkpoint format: byte layout, round trips, corruption handling."""

import struct

import numpy as np
import pytest

from polysnake.checkpoint import MAGIC, VERSION, load_arrays, save_arrays


def record(name, arr):
    a = np.asarray(arr, dtype="<f4")
    nb = name.encode("utf-8")
    out = struct.pack("<I", len(nb)) + nb + struct.pack("<I", a.ndim)
    for d in a.shape:
        out += struct.pack("<I", d)
    return out + a.tobytes(order="C")


class TestByteLayout:
    def test_golden_bytes(self, tmp_path):
        path = tmp_path / "ck.acdr"
        mat = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        scalar = np.float32(5.0)
        save_arrays(path, {"a": mat, "s": scalar})
        expected = (MAGIC + struct.pack("<I", VERSION)
                    + record("a", mat) + record("s", scalar))
        assert path.read_bytes() == expected

    def test_header_is_eight_bytes_for_empty_dict(self, tmp_path):
        path = tmp_path / "empty.acdr"
        save_arrays(path, {})
        assert path.read_bytes() == MAGIC + struct.pack("<I", VERSION)
        assert load_arrays(path) == {}

    def test_scalar_record_has_rank_zero(self, tmp_path):
        path = tmp_path / "s.acdr"
        save_arrays(path, {"t": np.float32(7.0)})
        blob = path.read_bytes()
        # magic(4) version(4) name_len(4) name(1) rank(4) data(4)
        assert len(blob) == 21
        assert struct.unpack_from("<I", blob, 13)[0] == 0


class TestRoundTrip:
    def test_various_ranks(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "scalar": np.float32(3.25),
            "vec": rng.standard_normal(7).astype(np.float32),
            "mat": rng.standard_normal((3, 5)).astype(np.float32),
            "conv.w": rng.standard_normal((4, 2, 3, 3)).astype(np.float32),
            "empty": np.zeros((0,), dtype=np.float32),
        }
        path = tmp_path / "ck.acdr"
        save_arrays(path, arrays)
        back = load_arrays(path)
        assert list(back) == list(arrays)
        for k, v in arrays.items():
            assert back[k].dtype == np.float32
            assert back[k].shape == np.asarray(v).shape
            assert np.array_equal(back[k], np.asarray(v, dtype=np.float32))

    def test_unicode_names(self, tmp_path):
        path = tmp_path / "u.acdr"
        arrays = {"enc0.conv1.w": np.ones((2, 2), dtype=np.float32),
                  "poids/é": np.float32(1.5)}
        save_arrays(path, arrays)
        back = load_arrays(path)
        assert set(back) == set(arrays)

    def test_float64_input_is_cast(self, tmp_path):
        path = tmp_path / "c.acdr"
        x = np.array([1.0 + 1e-12, 2.0], dtype=np.float64)
        save_arrays(path, {"x": x})
        back = load_arrays(path)["x"]
        assert back.dtype == np.float32
        assert np.array_equal(back, x.astype(np.float32))

    def test_large_array_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((64, 32, 3, 3)).astype(np.float32)
        path = tmp_path / "big.acdr"
        save_arrays(path, {"w": x})
        assert np.array_equal(load_arrays(path)["w"], x)


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.acdr"
        path.write_bytes(b"NOPE" + struct.pack("<I", VERSION))
        with pytest.raises(ValueError, match="magic"):
            load_arrays(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v.acdr"
        path.write_bytes(MAGIC + struct.pack("<I", 99))
        with pytest.raises(ValueError, match="version"):
            load_arrays(path)

    def test_truncated_data(self, tmp_path):
        path = tmp_path / "t.acdr"
        save_arrays(path, {"x": np.ones((4, 4), dtype=np.float32)})
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(ValueError, match="truncated"):
            load_arrays(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "h.acdr"
        path.write_bytes(MAGIC)
        with pytest.raises(ValueError):
            load_arrays(path)

    def test_duplicate_names_rejected(self, tmp_path):
        path = tmp_path / "d.acdr"
        x = np.ones(2, dtype=np.float32)
        blob = MAGIC + struct.pack("<I", VERSION) + record("x", x) + record("x", x)
        path.write_bytes(blob)
        with pytest.raises(ValueError, match="duplicate"):
            load_arrays(path)

    def test_non_finite_values_rejected_on_save(self, tmp_path):
        path = tmp_path / "n.acdr"
        with pytest.raises(ValueError, match="nan"):
            save_arrays(path, {"nan": np.array([np.nan], dtype=np.float32)})

    def test_empty_name_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="name"):
            save_arrays(tmp_path / "e.acdr", {"": np.ones(1, dtype=np.float32)})
