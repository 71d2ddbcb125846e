"""EMB1 writer (and a reader for round-trip checks).

The layout mirrors the harness side byte for byte: magic "EMB1", uint32
n_rows/n_cols, label/group flag bytes, six reserved zeros, float32
row-major features, optional int32 labels and groups, then a
length-prefixed UTF-8 key=value metadata trailer. Writes are atomic
(temp file + rename) so a crashed extraction never leaves a torn table.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"


class ExtractorError(Exception):
    """Extraction or generation cannot proceed."""


def encode_meta(meta: dict) -> bytes:
    parts = [f"backbone={meta.get('backbone', '')}", f"params={meta.get('params', 0)}"]
    parts.append(f"dataset={meta.get('dataset', '')}")
    for key in sorted(meta):
        if key not in ("backbone", "params", "dataset"):
            parts.append(f"{key}={meta[key]}")
    return "\n".join(parts).encode("utf-8")


def write_emb1(path, features, labels=None, groups=None, meta=None) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2 or features.size == 0:
        raise ExtractorError(f"features must be a non-empty 2-D matrix, got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ExtractorError("non-finite feature values")
    n = features.shape[0]
    blob = bytearray(
        MAGIC
        + struct.pack(
            "<IIBB6x",
            n,
            features.shape[1],
            int(labels is not None),
            int(groups is not None),
        )
    )
    blob += features.tobytes()
    for arr in (labels, groups):
        if arr is not None:
            arr = np.ascontiguousarray(arr, dtype="<i4")
            if arr.shape != (n,):
                raise ExtractorError(f"label/group vector must have length {n}")
            blob += arr.tobytes()
    meta_bytes = encode_meta(meta or {})
    blob += struct.pack("<I", len(meta_bytes)) + meta_bytes

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(blob))
    os.replace(tmp, path)


def read_emb1(path):
    """Parse an EMB1 file; returns (features, labels, groups, meta dict)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ExtractorError(f"{path}: bad magic {raw[:4]!r}")
    n, d, label_flag, group_flag = struct.unpack_from("<IIBB", raw, 4)
    off = 20
    features = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += 4 * n * d
    labels = groups = None
    if label_flag:
        labels = np.frombuffer(raw, dtype="<i4", count=n, offset=off)
        off += 4 * n
    if group_flag:
        groups = np.frombuffer(raw, dtype="<i4", count=n, offset=off)
        off += 4 * n
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    meta = {}
    for line in raw[off : off + meta_len].decode("utf-8").split("\n"):
        if line:
            key, _, value = line.partition("=")
            meta[key] = value
    return features, labels, groups, meta
