import struct

import numpy as np
import pytest

from mandera import ValidationError
from mandera.matrix_io import atomic_write, load_matrix, read_binary, read_csv, write_binary, write_csv


def test_binary_round_trip_is_bitwise(tmp_path, rng):
    M = rng.standard_normal((7, 13))
    M[0, 0] = -0.0
    M[1, 1] = 5e-324
    path = tmp_path / "m.bin"
    write_binary(path, M)
    raw = path.read_bytes()
    assert raw[:4] == b"MNDM"
    assert struct.unpack_from("<III", raw, 4) == (7, 13, 0)
    assert len(raw) == 16 + 8 * 7 * 13
    back = read_binary(path)
    assert back.tobytes() == M.tobytes()


def test_binary_rejects_bad_magic_and_truncation(tmp_path, rng):
    path = tmp_path / "m.bin"
    write_binary(path, rng.standard_normal((3, 4)))
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValidationError, match="magic"):
        read_binary(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValidationError, match="expected 112 bytes"):
        read_binary(tmp_path / "short.bin")
    (tmp_path / "tiny.bin").write_bytes(raw[:5])
    with pytest.raises(ValidationError, match="too short"):
        read_binary(tmp_path / "tiny.bin")


def test_binary_rejects_non_finite_payload(tmp_path):
    payload = struct.pack("<4sIII", b"MNDM", 2, 1, 0) + np.array([1.0, np.nan], "<f8").tobytes()
    (tmp_path / "nan.bin").write_bytes(payload)
    with pytest.raises(ValidationError, match="non-finite"):
        read_binary(tmp_path / "nan.bin")


def test_csv_round_trip(tmp_path, rng):
    M = rng.standard_normal((4, 3))
    write_csv(tmp_path / "m.csv", M, node_ids=[10, 11, 12, 13])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "node_id,g_0,g_1,g_2"
    back, ids = read_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back, M)
    np.testing.assert_array_equal(ids, [10, 11, 12, 13])
    np.testing.assert_array_equal(load_matrix(tmp_path / "m.csv"), M)


def test_csv_rejects_bad_header_and_ragged_rows(tmp_path):
    (tmp_path / "a.csv").write_text("id,g_0\n0,1.0\n")
    with pytest.raises(ValidationError, match="header"):
        read_csv(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("node_id,g_0,g_1\n0,1.0\n")
    with pytest.raises(ValidationError, match="row 0"):
        read_csv(tmp_path / "b.csv")


def test_load_matrix_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        load_matrix(tmp_path / "nope.bin")


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.txt"
    atomic_write(target, b"first")

    class Boom:
        def __len__(self):
            return 1

    with pytest.raises(TypeError):
        atomic_write(target, Boom())
    assert target.read_bytes() == b"first"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]
