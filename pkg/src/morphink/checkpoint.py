"""Binary checkpoint container.

Layout (all integers little-endian u32, floats little-endian f32):

    magic "MORF" | version | entry_count
    per entry: name_len | name utf-8 | rank | dims[rank] | data f32[prod(dims)]

Non-tensor payloads (the model's JSON config) are stored as one byte
value per float in a rank-1 entry; see `bytes_to_array`/`array_to_bytes`.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MORF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, entries: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays in insertion order."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        data = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape) if data.ndim else b"")
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", buf, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        entries[name] = arr.astype(np.float32).copy()
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return entries


def bytes_to_array(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype=np.uint8).astype(np.float32)


def array_to_bytes(arr: np.ndarray) -> bytes:
    vals = np.asarray(arr)
    if vals.ndim != 1 or np.any(vals < 0) or np.any(vals > 255):
        raise CheckpointError("byte-payload entry must be rank 1 with values in [0, 255]")
    return vals.astype(np.uint8).tobytes()
