import math

import numpy as np
import pytest
from scipy.stats import spearmanr

import embsel.estimators as est
from embsel import (
    AggregationError,
    EmbeddingTable,
    EstimatorError,
    RegistryError,
    TransferScore,
    aggregate_ranking,
    logme_score,
    nleep_score,
    parc_score,
    register_plugin_estimator,
    run_estimator,
)

from conftest import make_blobs


# --- LogME grid-search oracle -------------------------------------------------

def evidence_dense(F, y, alpha, beta):
    """Evidence via dense linear algebra: no SVD, no fixed point."""
    n, d = F.shape
    A = alpha * np.eye(d) + beta * F.T @ F
    m = beta * np.linalg.solve(A, F.T @ y)
    res = float(np.sum((y - F @ m) ** 2))
    _, logdet = np.linalg.slogdet(A)
    ev = (
        0.5 * d * math.log(alpha)
        + 0.5 * n * math.log(beta)
        - 0.5 * n * math.log(2 * math.pi)
        - 0.5 * beta * res
        - 0.5 * alpha * float(m @ m)
        - 0.5 * logdet
    )
    return ev / n


def logme_grid_oracle(table, coarse=81, fine=41):
    """Max evidence over a two-stage (alpha, beta) grid in logspace(-5, 5)."""
    F = np.asarray(table.features, dtype=float)
    labels = np.asarray(table.labels)
    per_class = []
    for c in range(labels.max() + 1):
        y = (labels == c).astype(float)
        grid = np.logspace(-5, 5, coarse)
        best, best_ab = -np.inf, (1.0, 1.0)
        for a in grid:
            for b in grid:
                ev = evidence_dense(F, y, a, b)
                if ev > best:
                    best, best_ab = ev, (a, b)
        la, lb = np.log10(best_ab)
        step = 10.0 / (coarse - 1)
        for a in np.logspace(la - step, la + step, fine):
            for b in np.logspace(lb - step, lb + step, fine):
                ev = evidence_dense(F, y, a, b)
                best = max(best, ev)
        per_class.append(best)
    return float(np.mean(per_class))


def test_logme_orthogonal_targets_give_zero_posterior_mean():
    # columns orthogonal to both one-vs-rest targets -> m = 0 for every class
    F = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    table = EmbeddingTable(F, labels=[0, 0, 1, 1])
    for detail in est.logme_details(table):
        assert detail["mtm"] == 0.0


def test_logme_matches_grid_oracle_small():
    table = make_blobs(n_per_class=20, n_classes=2, d=4, sep=2.0, seed=0)
    score = logme_score(table)
    assert score.converged
    assert score.score == pytest.approx(logme_grid_oracle(table), abs=1e-3)


def test_logme_informative_beats_noise():
    rng = np.random.default_rng(1)
    labels = np.repeat([0, 1, 2], 20)
    informative = make_blobs(n_per_class=20, n_classes=3, d=6, sep=3.0, seed=1)
    noise = EmbeddingTable(rng.standard_normal((60, 6)), labels=labels)
    s_inf = logme_score(informative).score
    s_noise = logme_score(noise).score
    assert s_inf > s_noise
    # the grid oracle agrees on the ordering
    assert logme_grid_oracle(informative) > logme_grid_oracle(noise)


def test_logme_positive_rescale_invariance():
    table = make_blobs(n_per_class=15, n_classes=2, d=5, seed=3)
    scaled = EmbeddingTable(
        np.asarray(table.features) * 3.7, labels=table.labels
    )
    assert logme_score(scaled).score == pytest.approx(
        logme_score(table).score, abs=1e-6
    )


def test_logme_errors():
    with pytest.raises(EstimatorError):
        logme_score(EmbeddingTable(np.ones((4, 2)), labels=[0, 0, 0, 0]))
    with pytest.raises(EstimatorError):
        logme_score(EmbeddingTable(np.zeros((4, 2)), labels=[0, 0, 1, 1]))
    with pytest.raises(EstimatorError):
        logme_score(EmbeddingTable(np.ones((4, 2))))  # no labels


# --- NLEEP --------------------------------------------------------------------

def point_mass_table(n_classes=3, per_class=10, d=4):
    rng = np.random.default_rng(0)
    centers = rng.standard_normal((n_classes, d)) * 10.0
    labels = np.repeat(np.arange(n_classes), per_class)
    return EmbeddingTable(centers[labels], labels=labels)


def test_nleep_perfect_clusters_score_zero():
    table = point_mass_table()
    score = nleep_score(table, n_components=3)
    assert score.score == 0.0


def test_nleep_never_positive():
    for seed in range(10):
        table = make_blobs(n_per_class=15, n_classes=2, d=5, sep=2.0, seed=seed)
        assert nleep_score(table, seed=seed).score <= 0.0


def test_nleep_shuffled_labels_approach_log_uniform():
    # clusters must be large or the within-cluster label frequency is
    # noticeably biased by each sample counting itself
    n_classes = 3
    base = make_blobs(n_per_class=50, n_classes=n_classes, d=6, sep=3.0, seed=5)
    scores = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        shuffled = EmbeddingTable(
            base.features, labels=rng.permutation(np.asarray(base.labels))
        )
        scores.append(nleep_score(shuffled, n_components=n_classes, seed=seed).score)
    assert np.mean(scores) == pytest.approx(-math.log(n_classes), abs=0.1)


def test_nleep_single_component_equals_log_class_frequency():
    # with one component r(1|x) = 1 and pi(y|1) = empirical class frequency
    labels = [0, 0, 0, 0, 1, 1]
    rng = np.random.default_rng(2)
    table = EmbeddingTable(rng.standard_normal((6, 3)), labels=labels)
    expected = np.mean([math.log({0: 4 / 6, 1: 2 / 6}[y]) for y in labels])
    assert nleep_score(table, n_components=1).score == pytest.approx(
        expected, abs=1e-9
    )


def test_nleep_component_validation():
    table = make_blobs(n_per_class=5)
    with pytest.raises(EstimatorError):
        nleep_score(table, n_components=0)
    with pytest.raises(EstimatorError):
        nleep_score(table, n_components=table.n + 1)


# --- PARC ---------------------------------------------------------------------

def test_parc_identity_is_exactly_100():
    labels = np.array([0, 1, 2, 0, 1, 2])
    onehot = np.eye(3)[labels]
    table = EmbeddingTable(onehot, labels=labels)
    assert parc_score(table).score == 100.0


def test_parc_hand_ranked_negative_case():
    # features one-hot of z=[0,1,0,1] against labels [0,0,1,1]:
    # triangle distance vectors rank-correlate at -0.5 -> score -50
    z = np.array([0, 1, 0, 1])
    table = EmbeddingTable(np.eye(2)[z], labels=[0, 0, 1, 1])
    score = parc_score(table).score
    assert score == pytest.approx(-50.0, abs=1e-9)
    assert score < 0


def test_parc_agrees_with_scipy_spearman():
    table = make_blobs(n_per_class=8, n_classes=2, d=5, sep=1.0, seed=11)
    F = np.asarray(table.features, dtype=float)
    d_feat = (1.0 - np.corrcoef(F))[np.tril_indices(table.n, -1)]
    onehot = np.eye(2)[np.asarray(table.labels)]
    d_lab = (1.0 - np.corrcoef(onehot))[np.tril_indices(table.n, -1)]
    rho = spearmanr(d_feat, d_lab).statistic
    assert parc_score(table).score == pytest.approx(100.0 * rho, abs=1e-9)


def test_parc_monotone_distance_transform_invariance():
    table = make_blobs(n_per_class=6, n_classes=2, d=4, seed=8)
    F = np.asarray(table.features, dtype=float)
    tri = np.tril_indices(table.n, -1)
    d_feat = (1.0 - np.corrcoef(F))[tri]
    onehot = np.eye(2)[np.asarray(table.labels)]
    d_lab = (1.0 - np.corrcoef(onehot))[tri]
    base = est.parc_from_distances(d_feat, d_lab)
    for transform in (np.exp, lambda x: x**3 + 5 * x, lambda x: np.arctan(x) - 2):
        assert est.parc_from_distances(transform(d_feat), d_lab) == base


def test_parc_constant_row_rejected():
    F = np.array([[1.0, 1.0, 1.0], [0.5, 0.2, 0.9], [0.1, 0.4, 0.8]])
    table = EmbeddingTable(F, labels=[0, 1, 0])
    with pytest.raises(EstimatorError):
        parc_score(table)


def test_parc_single_class_rejected():
    table = EmbeddingTable(np.random.default_rng(0).normal(size=(4, 3)), labels=[0] * 4)
    with pytest.raises(EstimatorError):
        parc_score(table)


# --- aggregation ----------------------------------------------------------------

def ts(score, converged=True):
    return TransferScore(estimator="x", score=score, converged=converged)


def test_single_column_is_descending_sort():
    scores = {
        ("a", "d1", "logme"): ts(0.3),
        ("b", "d1", "logme"): ts(0.9),
        ("c", "d1", "logme"): ts(0.5),
    }
    report = aggregate_ranking(scores, {"a": 10, "b": 20, "c": 30})
    assert [c["name"] for c in report.candidates] == ["b", "c", "a"]
    assert report.winner == "b"


def test_borda_hand_case_tie_broken_by_params():
    # per-column ranks (1,2), (2,1), (3,3) -> sums 3, 3, 6
    scores = {
        ("a", "d1", "e1"): ts(0.9), ("a", "d1", "e2"): ts(0.5),
        ("b", "d1", "e1"): ts(0.8), ("b", "d1", "e2"): ts(0.6),
        ("c", "d1", "e1"): ts(0.1), ("c", "d1", "e2"): ts(0.1),
    }
    report = aggregate_ranking(scores, {"a": 50, "b": 20, "c": 10})
    borda = {c["name"]: c["borda"] for c in report.candidates}
    assert borda == {"a": 3.0, "b": 3.0, "c": 6.0}
    assert report.winner == "b"  # fewer parameters than a


def test_budget_filters_winner():
    scores = {
        ("big", "d", "e"): ts(0.9),
        ("small", "d", "e"): ts(0.2),
    }
    report = aggregate_ranking(scores, {"big": 100, "small": 10}, budget=50)
    assert report.winner == "small"
    with pytest.raises(AggregationError):
        aggregate_ranking(scores, {"big": 100, "small": 10}, budget=5)


def test_missing_cell_rejected():
    scores = {
        ("a", "d1", "e1"): ts(0.9),
        ("b", "d1", "e1"): ts(0.8),
        ("a", "d2", "e1"): ts(0.7),
    }
    with pytest.raises(AggregationError):
        aggregate_ranking(scores, {"a": 1, "b": 2})


def test_monotone_score_transform_keeps_ranking():
    rng = np.random.default_rng(4)
    names = ["m1", "m2", "m3", "m4"]
    base = {(n, "d", "e"): ts(float(rng.normal())) for n in names}
    params = {n: 10 * i for i, n in enumerate(names, 1)}
    before = aggregate_ranking(base, params)
    warped = {
        k: ts(math.exp(v.score) + 2.0 * v.score) for k, v in base.items()
    }
    after = aggregate_ranking(warped, params)
    assert [c["name"] for c in before.candidates] == [
        c["name"] for c in after.candidates
    ]


def test_failed_cell_excludes_column_with_warning():
    scores = {
        ("a", "d", "e1"): ts(0.9), ("a", "d", "e2"): ts(float("nan"), converged=False),
        ("b", "d", "e1"): ts(0.1), ("b", "d", "e2"): ts(0.5),
    }
    report = aggregate_ranking(scores, {"a": 1, "b": 2})
    assert report.winner == "a"
    assert report.columns == [("d", "e1")]
    assert any("e2" in w for w in report.warnings)
    all_bad = {
        ("a", "d", "e2"): ts(float("nan"), converged=False),
        ("b", "d", "e2"): ts(0.5),
    }
    with pytest.raises(AggregationError):
        aggregate_ranking(all_bad, {"a": 1, "b": 2})


def test_iteration_capped_finite_cell_stays_ranked():
    # finite score from an iteration-capped run is usable, only flagged
    scores = {
        ("a", "d", "e1"): ts(0.9, converged=False),
        ("b", "d", "e1"): ts(0.1),
    }
    report = aggregate_ranking(scores, {"a": 1, "b": 2})
    assert report.columns == [("d", "e1")]
    assert report.winner == "a"
    assert any("iteration-capped" in w for w in report.warnings)


def test_logme_fixed_point_stationary_at_termination():
    # converged runs sit at a genuine fixed point: re-applying the alpha
    # and beta updates moves each by < 1e-4 relative
    rng = np.random.default_rng(3)
    checked = 0
    for trial in range(20):
        n = int(rng.integers(10, 80))
        d = int(rng.integers(1, 9))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        centers = rng.standard_normal((2, d))
        F = rng.uniform(0.5, 3.0) * centers[labels] + rng.standard_normal((n, d))
        table = EmbeddingTable(F, labels=labels)
        Fd = np.asarray(table.features, dtype=float)
        U, s, _ = np.linalg.svd(Fd, full_matrices=False)
        cutoff = s[0] * max(n, d) * np.finfo(float).eps
        r = int((s > cutoff).sum())
        sigma2 = (s[:r]) ** 2
        U = U[:, :r]
        for detail in est.logme_details(table):
            if not detail["converged"]:
                continue
            alpha, beta, mtm = detail["alpha"], detail["beta"], detail["mtm"]
            y = (np.asarray(table.labels) == detail["class"]).astype(float)
            u2 = (U.T @ y) ** 2
            gamma = float(np.sum(beta * sigma2 / (alpha + beta * sigma2)))
            ratio = beta * sigma2 / (alpha + beta * sigma2)
            res = max(float(y @ y) - float(np.sum((2 * ratio - ratio**2) * u2)), 0.0)
            # the caps are part of the update equations
            a_new = gamma / mtm if mtm > 0 else alpha
            a_new = min(max(a_new, 1 / est.ALPHA_CAP), est.ALPHA_CAP)
            b_new = (n - gamma) / res if res > 0 else beta
            b_new = min(max(b_new, 1 / est.BETA_CAP), est.BETA_CAP)
            assert abs(a_new - alpha) < 1e-4 * alpha
            assert abs(b_new - beta) < 1e-4 * beta
            checked += 1
    assert checked >= 20


# --- registry -------------------------------------------------------------------

def test_plugin_roundtrip(blob_table):
    try:
        register_plugin_estimator("sfda", lambda table: 0.42)
        result = run_estimator("plugin:sfda", blob_table)
        assert result.estimator == "plugin:sfda"
        assert result.score == 0.42 and result.converged
    finally:
        est._plugins.pop("sfda", None)


def test_plugin_nan_flagged_not_converged(blob_table):
    try:
        register_plugin_estimator("bad", lambda table: float("nan"))
        result = run_estimator("plugin:bad", blob_table)
        assert not result.converged
    finally:
        est._plugins.pop("bad", None)


def test_duplicate_builtin_name_rejected():
    with pytest.raises(RegistryError):
        register_plugin_estimator("logme", lambda table: 0.0)


def test_duplicate_plugin_name_rejected():
    try:
        register_plugin_estimator("mine", lambda table: 0.0)
        with pytest.raises(RegistryError):
            register_plugin_estimator("mine", lambda table: 1.0)
    finally:
        est._plugins.pop("mine", None)
