"""Checkpoint files: a JSON manifest followed by little-endian float32 blobs.

Layout::

    b"SEIC" | u16 version | u32 manifest_bytes | manifest (utf-8 JSON)
    | float32 LE data of each tensor, in manifest order

The manifest holds ``{"arch": {...}, "tensors": [{"name", "shape"}, ...]}``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SEIC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: dict[str, np.ndarray], arch: dict | None = None) -> None:
    names = sorted(state)
    manifest = {"arch": arch or {},
                "tensors": [{"name": n, "shape": list(np.shape(state[n]))} for n in names]}
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob)
        for n in names:
            fh.write(np.ascontiguousarray(state[n], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0")
    if len(raw) < 10:
        raise CheckpointError(f"{path}: truncated header at byte {len(raw)}")
    version, mlen = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} at byte 4")
    off = 10
    if len(raw) < off + mlen:
        raise CheckpointError(f"{path}: truncated manifest at byte {len(raw)}")
    manifest = json.loads(raw[off:off + mlen])
    off += mlen
    state = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = off + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r} at byte {len(raw)}")
        state[entry["name"]] = np.frombuffer(raw, "<f4", count, off).reshape(entry["shape"]).copy()
        off = end
    return state, manifest["arch"]
