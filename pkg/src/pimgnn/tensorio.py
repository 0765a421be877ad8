"""Single-file dense tensor container.

Layout: one JSON header line (magic, version, value kind, shape) terminated
by a newline, followed by the raw little-endian row-major payload.  Used for
model weights and for feature/output matrices crossing the CLI boundary.
"""

from __future__ import annotations

import json

import numpy as np

from .matrices import DenseMatrix, ValueKind

MAGIC = "pimgnn-tensor"
VERSION = 1


def save_tensor(path, m: DenseMatrix) -> None:
    header = {
        "magic": MAGIC,
        "version": VERSION,
        "value_kind": m.value_kind.value,
        "shape": [m.n_rows, m.n_cols],
    }
    payload = np.ascontiguousarray(m.values, m.value_kind.dtype)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii"))
        fh.write(b"\n")
        fh.write(payload.astype(payload.dtype.newbyteorder("<")).tobytes())


def load_tensor(path) -> DenseMatrix:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: bad tensor header: {exc}") from exc
        if header.get("magic") != MAGIC:
            raise ValueError(f"{path}: not a {MAGIC} file")
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')}")
        kind = ValueKind(header["value_kind"])
        rows, cols = (int(x) for x in header["shape"])
        raw = fh.read()
    expected = rows * cols * kind.nbytes
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype=kind.dtype.newbyteorder("<")).astype(kind.dtype)
    return DenseMatrix(rows, cols, arr.reshape(rows, cols), kind)
