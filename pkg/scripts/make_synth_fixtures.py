#!/usr/bin/env python3
"""Regenerate the checked-in synthetic benchmark suite under tests/fixtures/.

The suite is a grid of pseudo-backbones with graded signal-to-noise against
two patient-grouped datasets. Generation is pure: for each (backbone b_i,
dataset t_j) pair a fresh default_rng([seed, i, j]) draws, in order, the
class centroid matrix (C, dim) and the noise matrix (n, dim); features are
snr * centroid[label] + noise, stored as float32. Groups are contiguous
blocks of rows, each group pure in one class (class = group index mod C).

The same recipe, keyed by suite.json, is what the extractor's synthetic
generator produces, so the two sides can be cross-checked byte for byte.
"""

import json
from pathlib import Path

import numpy as np

from embsel import EmbeddingTable, TableMeta, write_table

SUITE = {
    "seed": 7,
    "backbones": [
        {"name": "bb-giant", "dim": 48, "params": 300_000_000, "snr": 2.5},
        {"name": "bb-large", "dim": 32, "params": 150_000_000, "snr": 1.2},
        {"name": "bb-base", "dim": 24, "params": 80_000_000, "snr": 0.6},
        {"name": "bb-small", "dim": 16, "params": 25_000_000, "snr": 0.3},
        {"name": "bb-noise", "dim": 12, "params": 5_000_000, "snr": 0.0},
    ],
    "datasets": [
        {"name": "radiograph5", "n_classes": 5, "n_groups": 30, "rows_per_group": 5},
        {"name": "scan2", "n_classes": 2, "n_groups": 30, "rows_per_group": 4},
    ],
}


def generate_table(suite_seed, backbone_index, backbone, dataset_index, dataset):
    rng = np.random.default_rng([suite_seed, backbone_index, dataset_index])
    n = dataset["n_groups"] * dataset["rows_per_group"]
    groups = np.repeat(np.arange(dataset["n_groups"]), dataset["rows_per_group"])
    labels = groups % dataset["n_classes"]
    centroids = rng.standard_normal((dataset["n_classes"], backbone["dim"]))
    noise = rng.standard_normal((n, backbone["dim"]))
    features = (backbone["snr"] * centroids[labels] + noise).astype(np.float32)
    return EmbeddingTable(
        features,
        labels=labels,
        groups=groups,
        meta=TableMeta(
            backbone=backbone["name"],
            params=backbone["params"],
            dataset=dataset["name"],
        ),
    )


def main():
    out_dir = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "suite"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "suite.json", "w") as fh:
        json.dump(SUITE, fh, indent=2)
        fh.write("\n")
    for bi, backbone in enumerate(SUITE["backbones"]):
        for di, dataset in enumerate(SUITE["datasets"]):
            table = generate_table(SUITE["seed"], bi, backbone, di, dataset)
            path = out_dir / f"{backbone['name']}__{dataset['name']}.emb1"
            write_table(table, path)
            print(f"wrote {path} (n={table.n}, d={table.d})")


if __name__ == "__main__":
    main()
