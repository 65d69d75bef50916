"""Parameter checkpoint serialization.

Binary layout, little-endian throughout:

    magic   4 bytes  b"FLSH"
    version u16      currently 1
    count   u32      number of parameters
    then per parameter:
        name_len u16, name UTF-8 bytes,
        rank u32, dims u32 * rank,
        values float64 * prod(dims)

Writes are atomic (temp file in the target directory, then rename).
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"FLSH"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: dict[str, np.ndarray], path: str) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, value in params.items():
        data = getattr(value, "data", value)
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d,
        # and tobytes() below already emits C order for any layout
        arr = np.asarray(data, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    blob = b"".join(chunks)
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob)
    if r.read(4) != MAGIC:
        raise CheckpointError(f"bad magic in {path!r}: not a FLSH checkpoint")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.read(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(r.read(8 * n), dtype="<f8").reshape(dims)
        out[name] = values.astype(np.float64)
    if r.pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return out
