"""Writer for the FGEB embedding-table format.

Layout (all little endian): magic ``FGEB``, u32 version (1), u32 dim,
u64 record count, then per record a u16 id length, the UTF-8 id bytes, and
dim float32 values. Record order is exactly the write order, which keeps
repeated exports byte-identical.

A reader is included so tests and tools can verify output without pulling
in the consuming package; consumers are expected to use their own loader.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"FGEB"
VERSION = 1
_HEADER = struct.Struct("<IIQ")


def write_fgeb(path, dim: int, records) -> None:
    """Write an ordered iterable of (id, vector) pairs to `path`."""
    if dim <= 0:
        raise FormatError("dim must be positive")
    path = Path(path)
    seen = set()
    body = bytearray()
    count = 0
    for key, vec in records:
        if not key:
            raise FormatError("record ids must be non-empty")
        if key in seen:
            raise FormatError(f"duplicate record id '{key}'")
        seen.add(key)
        kb = key.encode("utf-8")
        if len(kb) > 0xFFFF:
            raise FormatError(f"id too long for format: {key[:32]}...")
        arr = np.asarray(vec, dtype="<f4")
        if arr.shape != (dim,):
            raise FormatError(f"record '{key}': expected shape ({dim},), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"record '{key}': non-finite values")
        body += struct.pack("<H", len(kb))
        body += kb
        body += arr.tobytes()
        count += 1
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, dim, count))
        fh.write(body)


def read_fgeb(path) -> tuple[int, dict[str, np.ndarray]]:
    """Read a table back as (dim, ordered id -> float32 vector dict)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not an FGEB file")
    if len(blob) < 4 + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    version, dim, count = _HEADER.unpack_from(blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    entries: dict[str, np.ndarray] = {}
    off = 4 + _HEADER.size
    for i in range(count):
        if off + 2 > len(blob):
            raise FormatError(f"{path}: truncated at record {i}")
        (id_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + id_len + 4 * dim > len(blob):
            raise FormatError(f"{path}: truncated at record {i}")
        key = blob[off:off + id_len].decode("utf-8")
        off += id_len
        entries[key] = np.frombuffer(blob, dtype="<f4", count=dim, offset=off).copy()
        off += 4 * dim
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return dim, entries
