"""Single-file checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"MSGDDCK\\0"
    version    uint32
    hdr_len    uint64
    header     hdr_len bytes of UTF-8 JSON:
                 {"config": <flat config text>, "meta": {...},
                  "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    payload    concatenated raw C-order array bytes; offsets are relative to payload start
    checksum   32 bytes  SHA-256 of every preceding byte

Files are written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MSGDDCK\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(RuntimeError):
    pass


class ChecksumError(CheckpointError):
    pass


def write_container(path, arrays: dict[str, np.ndarray], config_text: str, meta: dict) -> None:
    index, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d arrays
            arr = arr.copy(order="C")
        raw = arr.tobytes()
        index.append({
            "name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
            "offset": offset, "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config_text, "meta": meta, "arrays": index}, sort_keys=True).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)
    data = body + hashlib.sha256(body).digest()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path):
    """Return (arrays, config_text, meta); raises ChecksumError on any corruption."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size + 32:
        raise ChecksumError(f"{path}: file too short to be a checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupt file)")
    magic, version, hdr_len = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads version {VERSION}")
    start = _PREFIX.size
    header = json.loads(body[start:start + hdr_len])
    payload = memoryview(body)[start + hdr_len:]
    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        flat = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = flat.reshape(tuple(entry["shape"])).copy()
    return arrays, header["config"], header["meta"]
