"""Matrix file formats.

* CSV: no header, one matrix row per line, values written with ``repr`` so
  they round-trip exactly.
* Binary: magic ``b"SSVD"``, ``u32`` version, ``u64`` rows, ``u64`` cols,
  then row-major little-endian float64.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FileFormatError

__all__ = ["MAGIC", "VERSION", "read_matrix", "write_matrix", "format_for"]

MAGIC = b"SSVD"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def format_for(path, fmt=None) -> str:
    """``"csv"`` or ``"bin"``, from ``fmt`` or the file extension."""
    if fmt:
        if fmt not in ("csv", "bin"):
            raise FileFormatError(f"unknown matrix format {fmt!r}")
        return fmt
    ext = os.path.splitext(str(path))[1].lower()
    return "csv" if ext in (".csv", ".txt") else "bin"


def write_matrix(path, A, fmt=None) -> None:
    """Write a 2-d array (1-d input is written as a column)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise FileFormatError("only matrices can be written")
    if format_for(path, fmt) == "csv":
        with open(path, "w") as fh:
            for row in A:
                fh.write(",".join(repr(float(x)) for x in row))
                fh.write("\n")
        return
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, A.shape[0], A.shape[1]))
        fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())


def read_matrix(path, fmt=None) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix`.

    Raises
    ------
    FileFormatError
        On a bad header, truncated payload or ragged CSV.
    """
    if format_for(path, fmt) == "csv":
        try:
            A = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
        except ValueError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
        return A
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FileFormatError(f"{path}: truncated header")
        magic, version, rows, cols = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FileFormatError(f"{path}: unsupported version {version}")
        payload = fh.read()
    if len(payload) != rows * cols * 8:
        raise FileFormatError(f"{path}: expected {rows * cols * 8} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float)
