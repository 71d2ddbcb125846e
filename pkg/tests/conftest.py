import numpy as np
import pytest

from embsel import EmbeddingTable, TableMeta


def make_blobs(
    n_per_class=20,
    n_classes=2,
    d=4,
    sep=4.0,
    noise=1.0,
    seed=0,
    group_size=None,
    meta=None,
):
    """Gaussian class blobs with optional contiguous patient groups."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, d)) * sep
    labels = np.repeat(np.arange(n_classes), n_per_class)
    features = centers[labels] + noise * rng.standard_normal((labels.size, d))
    groups = None
    if group_size:
        groups = np.arange(labels.size) // group_size
    return EmbeddingTable(
        features, labels=labels, groups=groups, meta=meta or TableMeta()
    )


@pytest.fixture
def blob_table():
    return make_blobs(seed=7, group_size=2)
