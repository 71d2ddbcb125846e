"""Embedding table interchange: validated in-memory tables and EMB1 file I/O.

EMB1 is a bit-exact little-endian binary layout so feature dumps written by
one tool are read back identically by another:

    bytes 0-3    magic "EMB1"
    bytes 4-7    uint32 n_rows
    bytes 8-11   uint32 n_cols
    byte 12      label flag (0/1)
    byte 13      group flag (0/1)
    bytes 14-19  reserved, must be zero
    payload      n_rows*n_cols float32, row-major
    labels       n_rows int32            (only if label flag)
    groups       n_rows int32            (only if group flag)
    trailer      uint32 L, then L bytes UTF-8 "key=value" lines
                 (keys: backbone, params, dataset)

A plain-text CSV with header ``f0..f{d-1}[,label][,group]`` is accepted as
well for hand-written fixtures; dispatch is by the ``.csv`` extension.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
HEADER_LEN = 20


class FormatError(Exception):
    """File does not follow the EMB1 (or fixture CSV) layout."""


class ValidationError(Exception):
    """Table content violates an invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class IoError(Exception):
    """Underlying filesystem failure."""


@dataclass(frozen=True)
class TableMeta:
    backbone: str = ""
    params: int = 0
    dataset: str = ""


class EmbeddingTable:
    """Immutable dense feature matrix with optional labels and group ids.

    Construction only coerces dtypes and shapes; content invariants are
    checked by :func:`validate` (and enforced by the I/O operations).
    """

    def __init__(self, features, labels=None, groups=None, meta=None):
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2:
            raise FormatError(f"features must be 2-D, got {features.ndim}-D")
        self.features = features
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int32)
        self.groups = None if groups is None else np.asarray(groups, dtype=np.int32)
        self.meta = meta if meta is not None else TableMeta()
        for arr in (self.features, self.labels, self.groups):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented

        def _same(a, b):
            if a is None or b is None:
                return a is b
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            _same(self.features, other.features)
            and _same(self.labels, other.labels)
            and _same(self.groups, other.groups)
            and self.meta == other.meta
        )

    def __repr__(self):
        return (
            f"EmbeddingTable(n={self.n}, d={self.d}, "
            f"labels={self.labels is not None}, groups={self.groups is not None}, "
            f"backbone={self.meta.backbone!r})"
        )


def validate(table: EmbeddingTable) -> list[str]:
    """Return one message per violated invariant; empty list means valid."""
    v = []
    f = table.features
    if f.shape[0] < 1:
        v.append("no rows")
    if f.shape[1] < 1:
        v.append("no columns")
    if not np.all(np.isfinite(f)):
        v.append("non-finite feature values")
    if table.labels is not None:
        if table.labels.shape != (f.shape[0],):
            v.append("labels length mismatch")
        else:
            if np.any(table.labels < 0):
                v.append("negative label (unlabeled sentinel not allowed)")
            else:
                present = np.unique(table.labels)
                if not np.array_equal(present, np.arange(present.size)):
                    v.append("labels not contiguous")
    if table.groups is not None and table.groups.shape != (f.shape[0],):
        v.append("groups length mismatch")
    return v


def _encode_meta(meta: TableMeta) -> bytes:
    text = f"backbone={meta.backbone}\nparams={meta.params}\ndataset={meta.dataset}"
    return text.encode("utf-8")


def _decode_meta(raw: bytes) -> TableMeta:
    if not raw:
        return TableMeta()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"metadata is not valid UTF-8: {exc}") from None
    fields = {"backbone": "", "params": "0", "dataset": ""}
    for line in text.split("\n"):
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"malformed metadata line: {line!r}")
        key, _, value = line.partition("=")
        if key in fields:
            fields[key] = value
        # unknown keys are tolerated for forward compatibility
    try:
        params = int(fields["params"])
    except ValueError:
        raise FormatError(f"metadata params is not an integer: {fields['params']!r}") from None
    return TableMeta(backbone=fields["backbone"], params=params, dataset=fields["dataset"])


def write_table(table: EmbeddingTable, path) -> None:
    """Write ``table`` to ``path`` in the EMB1 layout.

    The table is validated first; nothing is written if any invariant fails.
    """
    violations = validate(table)
    if violations:
        raise ValidationError(violations)
    has_labels = table.labels is not None
    has_groups = table.groups is not None
    header = MAGIC + struct.pack(
        "<IIBB6x", table.n, table.d, int(has_labels), int(has_groups)
    )
    meta_bytes = _encode_meta(table.meta)
    blob = bytearray(header)
    blob += np.ascontiguousarray(table.features, dtype="<f4").tobytes()
    if has_labels:
        blob += np.ascontiguousarray(table.labels, dtype="<i4").tobytes()
    if has_groups:
        blob += np.ascontiguousarray(table.groups, dtype="<i4").tobytes()
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    try:
        Path(path).write_bytes(bytes(blob))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def _read_emb1(raw: bytes, path) -> EmbeddingTable:
    if len(raw) < HEADER_LEN:
        raise FormatError(f"{path}: file shorter than the {HEADER_LEN}-byte header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {raw[:4]!r}")
    n, d, label_flag, group_flag = struct.unpack_from("<IIBB", raw, 4)
    if raw[14:20] != b"\x00" * 6:
        raise FormatError(f"{path}: reserved header bytes are not zero")
    if label_flag not in (0, 1) or group_flag not in (0, 1):
        raise FormatError(f"{path}: invalid flag byte")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: declared dims n={n}, d={d} are invalid")
    need = HEADER_LEN + 4 * n * d + 4 * n * label_flag + 4 * n * group_flag + 4
    if len(raw) < need:
        raise FormatError(
            f"{path}: declared dims need at least {need} bytes, file has {len(raw)}"
        )
    off = HEADER_LEN
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
    if len(raw) != off + meta_len:
        raise FormatError(
            f"{path}: metadata length {meta_len} inconsistent with file size"
        )
    meta = _decode_meta(raw[off:])
    return EmbeddingTable(features, labels=labels, groups=groups, meta=meta)


def _read_csv(path) -> EmbeddingTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header = rows[0]
    d = 0
    while d < len(header) and header[d] == f"f{d}":
        d += 1
    if d == 0:
        raise FormatError(f"{path}: CSV header must start with f0,f1,...")
    rest = header[d:]
    has_labels = bool(rest) and rest[0] == "label"
    has_groups = rest[has_labels:] == ["group"]
    if rest and not (has_labels or has_groups) or rest[has_labels + has_groups:]:
        raise FormatError(f"{path}: unexpected CSV columns {rest}")
    feats, labels, groups = [], [], []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}: line {ln} has {len(row)} fields, expected {len(header)}")
        try:
            feats.append([float(x) for x in row[:d]])
            if has_labels:
                labels.append(int(row[d]))
            if has_groups:
                groups.append(int(row[d + has_labels]))
        except ValueError as exc:
            raise FormatError(f"{path}: line {ln}: {exc}") from None
    if not feats:
        raise FormatError(f"{path}: CSV has no data rows")
    return EmbeddingTable(
        np.asarray(feats, dtype=np.float32),
        labels=labels if has_labels else None,
        groups=groups if has_groups else None,
    )


def read_table(path) -> EmbeddingTable:
    """Read an EMB1 (or ``.csv`` fixture) file and return a validated table."""
    p = Path(path)
    if p.suffix.lower() == ".csv":
        table = _read_csv(p)
    else:
        try:
            raw = p.read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from None
        table = _read_emb1(raw, p)
    violations = validate(table)
    if violations:
        raise ValidationError(violations)
    return table
