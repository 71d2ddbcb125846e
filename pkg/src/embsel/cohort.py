"""Patient-level fold planning and nested stratified subsampling.

All rows that share a group id (a patient) land in the same fold, so a
k-fold evaluation never leaks a patient across the train/test boundary.
Subsample masks for label-efficiency sweeps are nested: the rows selected
at a smaller fraction are a subset of those selected at any larger one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .store import EmbeddingTable

# The two fraction lists used for label-efficiency sweeps. The harness
# defaults to the eighth-step ladder; the quarter-step ladder is the
# other first-class preset.
FRACTION_PRESETS = {
    "eighths": (0.125, 0.25, 0.5, 1.0),
    "quarters": (0.25, 0.5, 0.75, 1.0),
}


class CohortError(Exception):
    """Split or subsample request that cannot be honored."""


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: np.ndarray  # row -> fold index in {0..k-1}
    seed: int

    def rows_in_fold(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def to_report(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "assignment": self.assignment.tolist(),
        }


@dataclass(frozen=True)
class SubsampleMask:
    fraction: float
    selected: np.ndarray  # boolean, length n
    seed: int

    def to_report(self) -> dict:
        return {
            "fraction": self.fraction,
            "seed": self.seed,
            "selected_rows": np.flatnonzero(self.selected).tolist(),
        }


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def group_kfold(table: EmbeddingTable, k: int, seed: int) -> FoldPlan:
    """Assign whole groups to k folds, balancing fold row counts.

    Group ids are shuffled by ``seed``, then walked from the largest group
    to the smallest, each going to the fold that currently holds the
    fewest rows. This keeps the fold-size spread bounded by the largest
    group and is fully deterministic.
    """
    if table.groups is None:
        raise CohortError("group k-fold requires group ids")
    if k < 2:
        raise CohortError(f"k must be >= 2, got {k}")
    ids, counts = np.unique(table.groups, return_counts=True)
    if ids.size < k:
        raise CohortError(f"only {ids.size} distinct groups for k={k} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ids.size)
    ids, counts = ids[perm], counts[perm]
    order = np.argsort(-counts, kind="stable")
    fold_of = {}
    fold_rows = np.zeros(k, dtype=np.int64)
    for gi in order:
        f = int(np.argmin(fold_rows))
        fold_of[int(ids[gi])] = f
        fold_rows[f] += counts[gi]
    assignment = np.array([fold_of[int(g)] for g in table.groups], dtype=np.int64)
    return FoldPlan(k=k, assignment=assignment, seed=seed)


def stratified_subsample(
    table: EmbeddingTable, fractions, seed: int
) -> list[SubsampleMask]:
    """Per-class nested subsample masks, one per requested fraction.

    Each class is shuffled once; a fraction keeps the first
    ``max(1, round_half_up(fraction * class_count))`` rows of that order,
    so masks for increasing fractions are nested by construction and every
    class stays represented even at the smallest fraction.
    """
    if table.labels is None:
        raise CohortError("stratified subsampling requires labels")
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise CohortError("no fractions given")
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise CohortError(f"fraction {f} outside (0, 1]")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise CohortError(f"fractions must be strictly increasing: {fractions}")
    labels = table.labels
    n_classes = int(labels.max()) + 1
    rng = np.random.default_rng(seed)
    class_order = []
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            raise CohortError(f"class {c} is empty")
        class_order.append(idx[rng.permutation(idx.size)])
    masks = []
    for f in fractions:
        selected = np.zeros(table.n, dtype=bool)
        for order in class_order:
            take = max(1, _round_half_up(f * order.size))
            selected[order[:take]] = True
        masks.append(SubsampleMask(fraction=f, selected=selected, seed=seed))
    return masks
