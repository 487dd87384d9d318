"""Versioned binary container for named float32 tensors.

Layout (all integers little-endian):

    bytes 0..7    magic ``CLABCKPT``
    bytes 8..11   uint32 format version (currently 1)
    bytes 12..19  uint64 manifest length M in bytes
    bytes 20..    UTF-8 JSON manifest of length M
    rest          tensor blob, float32 little-endian

The manifest is ``{"meta": {...}, "tensors": [{"name", "shape", "offset"}]}``
with offsets in bytes relative to the start of the blob.  ``meta`` is an
arbitrary JSON object owned by the caller (training step, rng state, ...).
"""
from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

MAGIC = b"CLABCKPT"
VERSION = 1

_F4 = np.dtype("<f4")


class CheckpointError(RuntimeError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    """Write named tensors to ``path``. Values are cast to float32."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype=_F4)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"meta": meta or {}, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for ch in chunks:
            f.write(ch)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a container written by :func:`save_tensors`.

    Returns ``(tensors, meta)``; tensors come back as float32 arrays.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    (mlen,) = struct.unpack_from("<Q", raw, 12)
    if 20 + mlen > len(raw):
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[20 : 20 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from e
    blob = raw[20 + mlen :]
    tensors: dict[str, np.ndarray] = {}
    for ent in manifest["tensors"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = ent["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: tensor {ent['name']!r} extends past end of file")
        tensors[ent["name"]] = np.frombuffer(blob[start:end], dtype=_F4).reshape(shape).copy()
    return tensors, manifest.get("meta", {})


def manifest_diff(expected: dict[str, tuple], found: dict[str, np.ndarray]) -> list[str]:
    """Human-readable differences between an expected name->shape map and
    loaded tensors. Empty list means compatible."""
    lines = []
    for name, shape in expected.items():
        if name not in found:
            lines.append(f"missing tensor {name} {tuple(shape)}")
        elif tuple(found[name].shape) != tuple(shape):
            lines.append(f"shape mismatch {name}: expected {tuple(shape)}, found {tuple(found[name].shape)}")
    for name in found:
        if name not in expected:
            lines.append(f"unexpected tensor {name} {tuple(found[name].shape)}")
    return lines
