"""Transferability estimators over frozen embeddings and rank aggregation.

Three estimators are built in:

* ``logme`` — log maximum marginal evidence of a Bayesian linear model,
  maximized over prior/noise precisions by a fixed-point iteration on the
  SVD of the feature matrix, one-vs-rest per class, averaged.
* ``nleep`` — log-likelihood of the labels under a soft Gaussian-mixture
  clustering of PCA-reduced features.
* ``parc`` — Spearman rank correlation (x100) between the pairwise
  correlation-distance structure of the features and of the one-hot labels.

Further estimators plug in through :func:`register_plugin_estimator` and
participate in the Borda-rank aggregation like the built-ins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .metrics import midranks
from .store import EmbeddingTable

BUILTIN_ESTIMATORS = ("logme", "nleep", "parc")

LOGME_TOL = 1e-6
LOGME_MAX_ITER = 100
BETA_CAP = 1e10
ALPHA_CAP = 1e12

NLEEP_VARIANCE_KEEP = 0.80
NLEEP_COV_FLOOR = 1e-6
NLEEP_REL_TOL = 1e-5
NLEEP_MAX_ITER = 200

_LOG_2PI = math.log(2.0 * math.pi)


class EstimatorError(Exception):
    """Estimator undefined or failed on the given table."""


class AggregationError(Exception):
    """Ranking cannot be formed from the given score cells."""


class RegistryError(Exception):
    """Plugin registration conflict."""


@dataclass
class TransferScore:
    estimator: str
    score: float
    converged: bool = True
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "score": self.score,
            "converged": self.converged,
            "iterations": self.iterations,
        }


# ---------------------------------------------------------------------------
# LogME
# ---------------------------------------------------------------------------

def _logme_one_class(sigma2, u2, yty, n, d, r):
    """Fixed-point evidence maximization for one binary target.

    ``sigma2`` are the squared non-zero singular values (length r), ``u2``
    the squared projections of the target onto the left singular vectors,
    ``yty`` = ||y||^2. Returns (per-sample evidence, alpha, beta, m^T m,
    iterations, converged).
    """
    alpha = beta = 1.0

    def evidence(alpha, beta):
        ratio = beta * sigma2 / (alpha + beta * sigma2)
        res = yty - np.sum((2.0 * ratio - ratio * ratio) * u2)
        res = max(res, 0.0)
        mtm = np.sum((beta * np.sqrt(sigma2) / (alpha + beta * sigma2)) ** 2 * u2)
        logdet = np.sum(np.log(alpha + beta * sigma2)) + (d - r) * math.log(alpha)
        ev = (
            0.5 * d * math.log(alpha)
            + 0.5 * n * math.log(beta)
            - 0.5 * n * _LOG_2PI
            - 0.5 * beta * res
            - 0.5 * alpha * mtm
            - 0.5 * logdet
        )
        return ev / n, res, mtm

    ev, res, mtm = evidence(alpha, beta)
    it = 0
    converged = False
    for it in range(1, LOGME_MAX_ITER + 1):
        gamma = float(np.sum(beta * sigma2 / (alpha + beta * sigma2)))
        alpha_new = gamma / mtm if mtm > 0.0 else ALPHA_CAP
        alpha_new = min(max(alpha_new, 1.0 / ALPHA_CAP), ALPHA_CAP)
        beta_new = (n - gamma) / res if res > 0.0 else BETA_CAP
        beta_new = min(max(beta_new, 1.0 / BETA_CAP), BETA_CAP)
        ev_new, res, mtm = evidence(alpha_new, beta_new)
        # stop only once the evidence is flat AND the updates themselves are
        # stationary; in flat-evidence directions the precisions can still be
        # moving by orders of magnitude when the evidence change is < tol
        stable = (
            abs(alpha_new - alpha) < 1e-5 * alpha
            and abs(beta_new - beta) < 1e-5 * beta
        )
        done = abs(ev_new - ev) < LOGME_TOL and stable
        alpha, beta, ev = alpha_new, beta_new, ev_new
        if done:
            converged = True
            break
    return ev, alpha, beta, mtm, it, converged


def logme_details(table: EmbeddingTable) -> list[dict]:
    """Per-class fixed-point results (evidence, alpha, beta, m^T m, ...)."""
    if table.labels is None:
        raise EstimatorError("logme requires labels")
    n_classes = table.n_classes
    if n_classes < 2:
        raise EstimatorError("logme requires at least two classes")
    F = np.asarray(table.features, dtype=np.float64)
    n, d = F.shape
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise EstimatorError("zero feature matrix")
    cutoff = s[0] * max(n, d) * np.finfo(np.float64).eps
    r = int(np.sum(s > cutoff))
    s = s[:r]
    U = U[:, :r]
    sigma2 = s * s
    out = []
    for c in range(n_classes):
        y = (table.labels == c).astype(np.float64)
        u = U.T @ y
        # components below numerical orthogonality are exactly zero
        u[np.abs(u) < np.linalg.norm(y) * max(n, d) * np.finfo(np.float64).eps] = 0.0
        ev, alpha, beta, mtm, it, converged = _logme_one_class(
            sigma2, u * u, float(y @ y), n, d, r
        )
        out.append(
            {
                "class": c,
                "evidence": ev,
                "alpha": alpha,
                "beta": beta,
                "mtm": mtm,
                "iterations": it,
                "converged": converged,
            }
        )
    return out


def logme_score(table: EmbeddingTable) -> TransferScore:
    """Mean per-class maximized log evidence per sample."""
    details = logme_details(table)
    score = float(np.mean([dd["evidence"] for dd in details]))
    return TransferScore(
        estimator="logme",
        score=score,
        converged=all(dd["converged"] for dd in details),
        iterations=max(dd["iterations"] for dd in details),
    )


# ---------------------------------------------------------------------------
# NLEEP
# ---------------------------------------------------------------------------

def _pca_project(F: np.ndarray, keep: float) -> np.ndarray:
    """Center and project onto the fewest components holding ``keep`` variance."""
    Xc = F - F.mean(axis=0)
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    total = float(np.sum(s * s))
    if total == 0.0:
        return np.zeros((F.shape[0], 1))
    ratio = np.cumsum(s * s) / total
    p = int(np.searchsorted(ratio, keep - 1e-12) + 1)
    p = min(p, s.size)
    return Xc @ Vt[:p].T


def _kmeanspp_centers(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = Z.shape[0]
    centers = np.empty((k, Z.shape[1]))
    first = int(rng.integers(n))
    centers[0] = Z[first]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total == 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = Z[idx]
        d2 = np.minimum(d2, np.sum((Z - centers[j]) ** 2, axis=1))
    return centers


def default_nleep_components(n: int, n_classes: int) -> int:
    return max(1, min(5 * n_classes, n // 10, n))


def nleep_score(
    table: EmbeddingTable, n_components: int | None = None, seed: int = 0
) -> TransferScore:
    """Log expected empirical prediction under a GMM soft clustering.

    Fits a diagonal-covariance mixture on PCA-reduced features (EM with
    k-means++ init), derives per-component label distributions from the
    responsibilities, then scores the mean log mixture-weighted
    probability of each sample's own label. Always <= 0; equals 0 only
    when every sample's label probability is exactly 1.
    """
    if table.labels is None:
        raise EstimatorError("nleep requires labels")
    n_classes = table.n_classes
    if n_classes < 2:
        raise EstimatorError("nleep requires at least two classes")
    n = table.n
    if n_components is None:
        n_components = default_nleep_components(n, n_classes)
    if not 1 <= n_components <= n:
        raise EstimatorError(f"n_components {n_components} outside [1, {n}]")
    F = np.asarray(table.features, dtype=np.float64)
    Z = np.ascontiguousarray(_pca_project(F, NLEEP_VARIANCE_KEEP))
    rng = np.random.default_rng(seed)
    means0 = _kmeanspp_centers(Z, n_components, rng)
    var0 = np.maximum(Z.var(axis=0), NLEEP_COV_FLOOR)
    vars0 = np.tile(var0, (n_components, 1))
    weights0 = np.full(n_components, 1.0 / n_components)
    weights, means, vars_, resp, ll, iters, conv = kernels.diag_gmm_em(
        Z,
        np.ascontiguousarray(means0),
        np.ascontiguousarray(vars0),
        weights0,
        NLEEP_COV_FLOOR,
        NLEEP_REL_TOL,
        NLEEP_MAX_ITER,
    )
    if not np.isfinite(ll):
        raise EstimatorError("EM failed to produce a finite likelihood")
    # label distribution per component from soft assignments
    mass = resp.sum(axis=0)
    pi = np.zeros((n_classes, n_components))
    for c in range(n_classes):
        pi[c] = resp[table.labels == c].sum(axis=0)
    nonzero = mass > 0
    pi[:, nonzero] /= mass[nonzero]
    prob = np.einsum("ik,ik->i", resp, pi[table.labels])
    prob = np.clip(prob, 1e-300, 1.0)
    score = float(np.mean(np.log(prob)))
    return TransferScore(
        estimator="nleep", score=score, converged=bool(conv), iterations=int(iters)
    )


# ---------------------------------------------------------------------------
# PARC
# ---------------------------------------------------------------------------

def spearman(a, b) -> float:
    """Spearman rank correlation with midranks for ties."""
    ra = midranks(a)
    rb = midranks(b)
    if np.array_equal(ra, rb):
        return 1.0  # identical rankings correlate exactly 1; skips sqrt rounding
    da = ra - ra.mean()
    db = rb - rb.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        raise EstimatorError("constant rank vector, correlation undefined")
    return float((da @ db) / math.sqrt(va * vb))


def parc_from_distances(d_feat: np.ndarray, d_label: np.ndarray) -> float:
    """PARC score from the two strict lower-triangle distance vectors."""
    rho = spearman(d_feat, d_label)
    return float(np.clip(100.0 * rho, -100.0, 100.0))


def parc_score(table: EmbeddingTable) -> TransferScore:
    """Rank agreement between feature-space and label-space pair distances."""
    if table.labels is None:
        raise EstimatorError("parc requires labels")
    if table.n < 3:
        raise EstimatorError("parc requires at least 3 rows")
    if table.n_classes < 2:
        raise EstimatorError("parc requires at least two classes")
    F = np.asarray(table.features, dtype=np.float64)
    if np.any(F.var(axis=1) == 0.0):
        raise EstimatorError("degenerate row: zero variance feature row")
    d_feat = 1.0 - np.corrcoef(F)
    onehot = np.zeros((table.n, table.n_classes))
    onehot[np.arange(table.n), table.labels] = 1.0
    d_label = 1.0 - np.corrcoef(onehot)
    tri = np.tril_indices(table.n, k=-1)
    score = parc_from_distances(d_feat[tri], d_label[tri])
    return TransferScore(estimator="parc", score=score, converged=True, iterations=0)


# ---------------------------------------------------------------------------
# Plugin registry
# ---------------------------------------------------------------------------

_plugins: dict = {}


def register_plugin_estimator(name: str, fn) -> None:
    """Register ``fn(table) -> TransferScore | float`` as ``plugin:<name>``."""
    if name in BUILTIN_ESTIMATORS or name in _plugins:
        raise RegistryError(f"estimator {name!r} already registered")
    _plugins[name] = fn


def registered_estimators() -> list[str]:
    return list(BUILTIN_ESTIMATORS) + [f"plugin:{k}" for k in sorted(_plugins)]


def run_estimator(name: str, table: EmbeddingTable, seed: int = 0) -> TransferScore:
    """Dispatch one estimator by name (``logme``/``nleep``/``parc``/``plugin:x``)."""
    if name == "logme":
        return logme_score(table)
    if name == "nleep":
        return nleep_score(table, seed=seed)
    if name == "parc":
        return parc_score(table)
    key = name.removeprefix("plugin:")
    if key in _plugins:
        result = _plugins[key](table)
        if not isinstance(result, TransferScore):
            result = TransferScore(estimator=f"plugin:{key}", score=float(result))
        result.estimator = f"plugin:{key}"
        if not math.isfinite(result.score):
            result.converged = False
        return result
    raise EstimatorError(f"unknown estimator {name!r}")


# ---------------------------------------------------------------------------
# Rank aggregation
# ---------------------------------------------------------------------------

@dataclass
class RankingReport:
    candidates: list  # dicts: name, params, scores per column, borda
    winner: str
    columns: list = field(default_factory=list)  # (dataset, estimator) used
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "candidates": self.candidates,
            "winner": self.winner,
            "columns": [list(c) for c in self.columns],
            "warnings": list(self.warnings),
        }


def aggregate_ranking(
    scores: dict, params: dict, budget: int | None = None
) -> RankingReport:
    """Borda (rank-sum) aggregation of score cells into a model ranking.

    ``scores`` maps (backbone, dataset, estimator) to a TransferScore.
    Within each (dataset, estimator) column backbones are ranked by
    descending score with midranks for ties; columns containing any
    non-finite (unusable) cell are dropped with a warning so rank sums
    stay comparable, while finite scores from iteration-capped runs stay
    in (flagged in the warnings). The winner is the minimal Borda sum
    among backbones within the parameter budget, ties broken by smaller
    parameter count, then name.
    """
    backbones = sorted({key[0] for key in scores})
    columns = sorted({(key[1], key[2]) for key in scores})
    if not backbones or not columns:
        raise AggregationError("no score cells to aggregate")
    for b in backbones:
        if b not in params:
            raise AggregationError(f"missing parameter count for {b!r}")
        for ds, est in columns:
            if (b, ds, est) not in scores:
                raise AggregationError(f"missing score cell ({b}, {ds}, {est})")

    warnings = []
    usable = []
    for col in columns:
        cells = [scores[(b, col[0], col[1])] for b in backbones]
        bad = [
            b for b, cell in zip(backbones, cells) if not math.isfinite(cell.score)
        ]
        capped = [
            b
            for b, cell in zip(backbones, cells)
            if math.isfinite(cell.score) and not cell.converged
        ]
        if bad:
            warnings.append(
                f"column {col[0]}/{col[1]} excluded from ranking: "
                f"failed cells for {', '.join(bad)}"
            )
        else:
            if capped:
                warnings.append(
                    f"column {col[0]}/{col[1]}: iteration-capped cells for "
                    f"{', '.join(capped)} (scores kept)"
                )
            usable.append(col)
    if not usable:
        raise AggregationError("no usable estimator columns after exclusions")

    borda = {b: 0.0 for b in backbones}
    for ds, est in usable:
        col_scores = np.array([scores[(b, ds, est)].score for b in backbones])
        ranks = midranks(-col_scores)  # rank 1 = best (highest score)
        for b, r in zip(backbones, ranks):
            borda[b] += float(r)

    candidates = []
    for b in backbones:
        candidates.append(
            {
                "name": b,
                "params": int(params[b]),
                "scores": {
                    f"{ds}/{est}": scores[(b, ds, est)].score for ds, est in columns
                },
                "borda": borda[b],
            }
        )
    candidates.sort(key=lambda c: (c["borda"], c["params"], c["name"]))

    feasible = [
        c for c in candidates if budget is None or c["params"] <= budget
    ]
    if not feasible:
        raise AggregationError("no candidate within budget")
    winner = feasible[0]["name"]
    return RankingReport(
        candidates=candidates, winner=winner, columns=usable, warnings=warnings
    )
