"""Manifest-driven feature extraction into EMB1 tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import load_backbone
from .emb1 import ExtractorError, write_emb1


@dataclass
class ExtractionJob:
    backbone: str
    images_dir: Path
    manifest: Path
    output: Path
    batch_size: int = 8
    device: str = "cpu"
    pool: str = "avg"
    pretrained: bool = False
    dataset: str = ""


def read_manifest(path) -> list[tuple[str, int, int]]:
    """Rows of (filename, label, group) in file order."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["filename", "label", "group"]:
        raise ExtractorError(f"{path}: manifest header must be filename,label,group")
    out = []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise ExtractorError(f"{path}: line {ln} has {len(row)} fields")
        try:
            out.append((row[0], int(row[1]), int(row[2])))
        except ValueError as exc:
            raise ExtractorError(f"{path}: line {ln}: {exc}") from None
    if not out:
        raise ExtractorError(f"{path}: manifest has no rows")
    return out


def extract_features(job: ExtractionJob) -> Path:
    """Embed every manifest image, in manifest order, into one EMB1 file."""
    entries = read_manifest(job.manifest)
    images_dir = Path(job.images_dir)
    missing = [name for name, _, _ in entries if not (images_dir / name).exists()]
    if missing:
        raise ExtractorError(f"missing images: {', '.join(sorted(missing))}")

    backbone = load_backbone(job.backbone, pretrained=job.pretrained)
    rows = []
    for start in range(0, len(entries), job.batch_size):
        batch = entries[start : start + job.batch_size]
        images = [Image.open(images_dir / name) for name, _, _ in batch]
        rows.append(backbone.embed_batch(images))
        for img in images:
            img.close()
    features = np.concatenate(rows, axis=0)
    labels = np.array([label for _, label, _ in entries], dtype=np.int32)
    groups = np.array([group for _, _, group in entries], dtype=np.int32)
    meta = {
        "backbone": backbone.name,
        "params": backbone.params,
        "dataset": job.dataset or Path(job.manifest).stem,
        "pool": job.pool,
    }
    write_emb1(job.output, features, labels=labels, groups=groups, meta=meta)
    return Path(job.output)
