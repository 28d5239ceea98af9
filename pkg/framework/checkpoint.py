"""Binary checkpoint container.

Layout (all integers little-endian), documented in docs/checkpoint_format.md::

    magic        8 bytes   b"OMAMBACK"
    version      u32
    meta_len     u32
    meta         meta_len bytes of UTF-8 JSON
    count        u32
    count records:
        name_len u32, name (UTF-8), dtype u8, ndim u8, dims ndim x u64,
        payload  prod(dims) values, little-endian
"""
from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from framework.errors import CheckpointError

log = logging.getLogger(__name__)

MAGIC = b"OMAMBACK"
FORMAT_VERSION = 1
DTYPE_CODES: dict[np.dtype, int] = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


def save_checkpoint(path: str | Path, records: Mapping[str, np.ndarray], metadata: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(records))]
    for name, array in records.items():
        array = np.asarray(array)
        little = array.dtype.newbyteorder("<")
        if little not in DTYPE_CODES:
            raise CheckpointError(f"record {name!r} has unsupported dtype {array.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", DTYPE_CODES[little], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=little).tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    log.info("checkpoint written to %s (%d records)", path, len(records))
    return path


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob, self.offset, self.path = blob, 0, path

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint at byte {self.offset}")
        chunk = self.blob[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}, expected {FORMAT_VERSION}")
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata ({exc})") from exc
    (count,) = reader.unpack("<I")
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        code, ndim = reader.unpack("<BB")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{path}: record {name!r} has unknown dtype code {code}")
        dims = reader.unpack(f"<{ndim}Q")
        dtype = CODE_DTYPES[code]
        payload = reader.take(int(np.prod(dims, dtype=np.int64)) * dtype.itemsize)
        records[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    return records, metadata
