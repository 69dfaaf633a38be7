"""Field serialization: two-column CSV and the ``DPF1`` binary block.

Binary layout (little-endian)::

    bytes 0-3    magic b"DPF1"
    bytes 4-11   N  (uint64)
    bytes 12-19  L  (float64)
    bytes 20-    N samples (float64)

The grid is recovered from ``(L, N)``; x-coordinates are implied.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .spectral import Field, Grid

MAGIC = b"DPF1"
_HEADER = struct.Struct("<4sQd")


def fmt(v: float) -> str:
    """Full-precision (17 significant digit) text for one number."""
    return format(float(v), ".17g")


def write_columns_csv(path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    cols = [np.asarray(columns[n], dtype=float) for n in names]
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in zip(*cols):
        buf.write(",".join(fmt(v) for v in row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_field_csv(path, f: Field) -> None:
    write_columns_csv(path, {"x": f.grid.x, "value": f.values})


def read_field_csv(path) -> Field:
    """Read an ``x,value`` CSV written by :func:`write_field_csv`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "x,value":
            raise ValueError(f"unexpected CSV header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    x, v = data[:, 0], data[:, 1]
    grid = Grid(-x[0], len(x))
    if not np.allclose(x, grid.x, rtol=0, atol=1e-9 * grid.L):
        raise ValueError("x column is not a uniform periodic grid on [-L, L)")
    return Field(grid, v)


def field_to_bytes(f: Field) -> bytes:
    header = _HEADER.pack(MAGIC, f.grid.N, f.grid.L)
    return header + np.asarray(f.values, dtype="<f8").tobytes()


def field_from_bytes(blob: bytes) -> Field:
    if len(blob) < _HEADER.size:
        raise ValueError("truncated DPF1 header")
    magic, n, L = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    body = blob[_HEADER.size:]
    if len(body) != 8 * n:
        raise ValueError(f"expected {8 * n} payload bytes, got {len(body)}")
    return Field(Grid(L, n), np.frombuffer(body, dtype="<f8"))


def write_field_binary(path, f: Field) -> None:
    Path(path).write_bytes(field_to_bytes(f))


def read_field_binary(path) -> Field:
    return field_from_bytes(Path(path).read_bytes())
