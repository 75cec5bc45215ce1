"""Single-file tensor archive with a JSON manifest.

Layout: 4-byte magic, uint32 format version, uint64 manifest length, the
manifest JSON (tensor names, dtypes, shapes, payload offsets, plus a free-form
``meta`` dict), then the raw little-endian row-major payload. Used for encoder
weight files and training checkpoints.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SCTA"
VERSION = 1


class ArchiveError(Exception):
    """Raised for malformed, truncated, or mismatched archive files."""


def save_archive(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        le = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        arr = arr.astype(le, copy=False)
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(manifest)))
        f.write(manifest)
        for blob in blobs:
            f.write(blob)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ArchiveError(f"cannot read archive {path}: {e}") from e
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ArchiveError(f"{path} is not a tensor archive (bad magic)")
    version, mlen = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    if len(raw) < 16 + mlen:
        raise ArchiveError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveError(f"{path}: corrupt manifest: {e}") from e
    payload = raw[16 + mlen:]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise ArchiveError(f"{path}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(payload[start:start + nbytes], dtype=np.dtype(entry["dtype"]))
        tensors[name] = arr.reshape(entry["shape"]).copy()
    return tensors, manifest.get("meta", {})
