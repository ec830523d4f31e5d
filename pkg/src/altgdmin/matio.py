"""Binary matrix files.

Layout: 16-byte little-endian header ``b"ALTM"``, version (u32), rows (u32),
cols (u32), then ``rows * cols`` IEEE-754 float64 values, little-endian,
row-major.
"""
import struct
from pathlib import Path

import numpy as np

from .errors import MatrixFormatError

MAGIC = b"ALTM"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def dumps_matrix(M) -> bytes:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise MatrixFormatError(f"expected a 2-D array, got shape {M.shape}")
    rows, cols = M.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + np.ascontiguousarray(M, dtype="<f8").tobytes()


def loads_matrix(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise MatrixFormatError("truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MatrixFormatError(f"unsupported version {version}")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise MatrixFormatError(f"expected {expected} bytes, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.astype(np.float64).reshape(rows, cols)


def write_matrix(path, M) -> None:
    Path(path).write_bytes(dumps_matrix(M))


def read_matrix(path) -> np.ndarray:
    return loads_matrix(Path(path).read_bytes())


def write_index_pairs(path, rows, cols) -> None:
    """Write (row, col) pairs as sorted little-endian u32 pairs."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    order = np.lexsort((cols, rows))
    pairs = np.stack([rows[order], cols[order]], axis=1).astype("<u4")
    Path(path).write_bytes(pairs.tobytes())


def read_index_pairs(path):
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise MatrixFormatError("index file length is not a multiple of 8")
    pairs = np.frombuffer(raw, dtype="<u4").reshape(-1, 2).astype(np.int64)
    return pairs[:, 0].copy(), pairs[:, 1].copy()
