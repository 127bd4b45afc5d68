"""
Parameter checkpoint container.

Byte layout (all integers little-endian):

    magic           8 bytes   b"SELDCKPT"
    version         uint32    FORMAT_VERSION
    config_hash     64 bytes  ascii hex sha256 of the model config
    meta_len        uint32    length of the metadata JSON blob
    meta            meta_len  utf-8 JSON (run state: epoch, step, rng, ...)
    n_entries       uint32
    entries         n_entries times:
        name_len    uint16
        name        name_len bytes, utf-8 dotted path
        dtype       uint8     0 = float32, 1 = float64, 2 = int64
        ndim        uint8
        dims        ndim x uint32
        nbytes      uint64
        data        nbytes raw little-endian values, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Optional

import numpy as np

from seld_einv2.errors import CheckpointError

MAGIC = b"SELDCKPT"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


def save_checkpoint(
    path: str | Path,
    entries: dict[str, np.ndarray],
    config_hash: str,
    meta: Optional[dict[str, Any]] = None,
) -> Path:
    """Write named arrays plus run metadata to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if len(config_hash) != 64:
        raise CheckpointError(f"config hash must be 64 hex characters, got {len(config_hash)}")
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        config_hash.encode("ascii"),
        struct.pack("<I", len(meta_blob)),
        meta_blob,
        struct.pack("<I", len(entries)),
    ]
    for name, array in entries.items():
        array = np.asarray(array)
        code = _CODES.get(array.dtype)
        if code is None:
            raise CheckpointError(f"Unsupported dtype {array.dtype} for entry {name}")
        raw = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<BB", code, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(struct.pack("<Q", len(raw)) + raw)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str, dict[str, Any]]:
    """Read a checkpoint; returns (entries, config_hash, meta)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    try:
        (version,) = struct.unpack_from("<I", blob, 8)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version} in {path}")
        config_hash = blob[12:76].decode("ascii")
        (meta_len,) = struct.unpack_from("<I", blob, 76)
        offset = 80
        meta = json.loads(blob[offset:offset + meta_len].decode("utf-8"))
        offset += meta_len
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            dims = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            (nbytes,) = struct.unpack_from("<Q", blob, offset)
            offset += 8
            dtype = _DTYPES[code]
            entries[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset).reshape(dims).copy()
            offset += nbytes
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}")
    return entries, config_hash, meta
