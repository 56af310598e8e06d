"""Message matrix files.

Binary layout: 16-byte header ``b"MNDM"``, u32 n, u32 p, u32 reserved (all
little-endian), then n*p little-endian float64 values in row-major order.
CSV layout: header ``node_id,g_0,...,g_{p-1}``, one row per node.
"""

import csv
import os
import struct
import tempfile

import numpy as np

from ._validation import ValidationError, check_message_matrix

MAGIC = b"MNDM"
_HEADER = struct.Struct("<4sIII")


def atomic_write(path, data, mode="wb"):
    """Write ``data`` to a temp file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_binary(path, M):
    M = check_message_matrix(M, min_nodes=1)
    n, p = M.shape
    payload = _HEADER.pack(MAGIC, n, p, 0) + M.astype("<f8").tobytes(order="C")
    atomic_write(path, payload)


def read_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: file too short for header ({len(raw)} bytes)")
    magic, n, p, _ = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + 8 * n * p
    if len(raw) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes for {n}x{p}, got {len(raw)}")
    M = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, p).astype(np.float64)
    return check_message_matrix(M, min_nodes=1)


def write_csv(path, M, node_ids=None):
    M = check_message_matrix(M, min_nodes=1)
    n, p = M.shape
    ids = np.arange(n) if node_ids is None else np.asarray(node_ids)
    if ids.shape != (n,):
        raise ValidationError("node_ids must have one entry per row")
    lines = ["node_id," + ",".join(f"g_{j}" for j in range(p))]
    for i in range(n):
        lines.append(f"{int(ids[i])}," + ",".join(repr(float(x)) for x in M[i]))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_csv(path):
    """Return ``(M, node_ids)`` from a CSV written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "node_id":
        raise ValidationError(f"{path}: missing 'node_id,g_0,...' header")
    p = len(rows[0]) - 1
    if rows[0][1:] != [f"g_{j}" for j in range(p)]:
        raise ValidationError(f"{path}: gradient columns must be named g_0..g_{p - 1}")
    body = [r for r in rows[1:] if r]
    for k, r in enumerate(body):
        if len(r) != p + 1:
            raise ValidationError(f"{path}: row {k} has {len(r) - 1} values, expected {p}")
    ids = np.array([int(r[0]) for r in body], dtype=np.int64)
    M = np.array([[float(x) for x in r[1:]] for r in body], dtype=np.float64).reshape(len(body), p)
    return check_message_matrix(M, min_nodes=1), ids


def load_matrix(path):
    """Dispatch on extension: ``.csv`` is CSV, anything else is binary."""
    if not os.path.isfile(path):
        raise ValidationError(f"matrix file not found: {path}")
    if os.fspath(path).lower().endswith(".csv"):
        return read_csv(path)[0]
    return read_binary(path)
