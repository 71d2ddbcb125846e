"""Synthetic benchmark suite generator.

Stands in for real extraction runs: a grid of pseudo-backbones with graded
signal-to-noise against labeled, patient-grouped datasets, with a known
ground-truth informativeness ordering. Generation is pure and keyed by the
spec, so the same spec file always reproduces the same bytes: for pair
(backbone i, dataset j) a fresh default_rng([seed, i, j]) draws the class
centroid matrix (n_classes, dim) then the noise matrix (n, dim); features
are snr * centroid[label] + noise in float32. Groups are contiguous row
blocks, each pure in class (group index mod n_classes).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .emb1 import ExtractorError, write_emb1


def load_spec(path) -> dict:
    with open(path) as fh:
        spec = json.load(fh)
    check_spec(spec)
    return spec


def check_spec(spec: dict) -> None:
    backbones = spec.get("backbones", [])
    if len(backbones) < 2:
        raise ExtractorError("suite spec needs at least two pseudo-backbones")
    snrs = [b["snr"] for b in backbones]
    if len(set(snrs)) < 2:
        raise ExtractorError("pseudo-backbones must have graded signal-to-noise")
    if not spec.get("datasets"):
        raise ExtractorError("suite spec needs at least one dataset")


def generate_pair(seed, backbone_index, backbone, dataset_index, dataset):
    rng = np.random.default_rng([seed, backbone_index, dataset_index])
    n = dataset["n_groups"] * dataset["rows_per_group"]
    groups = np.repeat(np.arange(dataset["n_groups"]), dataset["rows_per_group"])
    labels = groups % dataset["n_classes"]
    centroids = rng.standard_normal((dataset["n_classes"], backbone["dim"]))
    noise = rng.standard_normal((n, backbone["dim"]))
    features = (backbone["snr"] * centroids[labels] + noise).astype(np.float32)
    return features, labels.astype(np.int32), groups.astype(np.int32)


def gen_synthetic_suite(spec: dict, out_dir) -> list[Path]:
    """Write one EMB1 file per (pseudo-backbone, dataset) pair."""
    check_spec(spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for bi, backbone in enumerate(spec["backbones"]):
        for di, dataset in enumerate(spec["datasets"]):
            features, labels, groups = generate_pair(
                spec["seed"], bi, backbone, di, dataset
            )
            path = out_dir / f"{backbone['name']}__{dataset['name']}.emb1"
            write_emb1(
                path,
                features,
                labels=labels,
                groups=groups,
                meta={
                    "backbone": backbone["name"],
                    "params": backbone["params"],
                    "dataset": dataset["name"],
                },
            )
            paths.append(path)
    return paths
