"""Deterministic convex training of a linear classifier on frozen features.

The objective is the mean multinomial negative log-likelihood plus an L2
penalty on the weight matrix (bias unpenalized), minimized by full-batch
gradient descent with Armijo backtracking from a zero start. No
randomness anywhere, so two runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .store import EmbeddingTable

ARMIJO_C = 1e-4
MAX_HALVINGS = 60
MAX_STEP = 1e8


class ProbeError(Exception):
    """Probe training or prediction cannot proceed."""


@dataclass
class ProbeModel:
    weights: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)
    lam: float
    trace: list = field(default_factory=list)  # (iteration, loss, grad_norm)
    converged: bool = False
    n_iter: int = 0

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "lambda": self.lam,
            "converged": self.converged,
            "n_iter": self.n_iter,
        }


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def train_probe(
    table: EmbeddingTable,
    lam: float,
    tol: float = 1e-5,
    max_iter: int = 2000,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> ProbeModel:
    """Fit the probe by full-batch descent until the gradient norm <= tol.

    ``init`` overrides the canonical zero start; the objective is strictly
    convex for lam > 0, so any start converges to the same loss (this hook
    exists for the uniqueness tests and warm starts).
    """
    if table.labels is None:
        raise ProbeError("probe training requires labels")
    if lam <= 0:
        raise ProbeError(f"lambda must be > 0, got {lam}")
    n_classes = table.n_classes
    if n_classes < 2:
        raise ProbeError("probe training requires at least two classes")
    X = np.ascontiguousarray(table.features, dtype=np.float64)
    Y = _one_hot(table.labels, n_classes)
    if init is None:
        W = np.zeros((n_classes, table.d))
        b = np.zeros(n_classes)
    else:
        W = np.ascontiguousarray(init[0], dtype=np.float64).copy()
        b = np.ascontiguousarray(init[1], dtype=np.float64).copy()
        if W.shape != (n_classes, table.d) or b.shape != (n_classes,):
            raise ProbeError("init shapes do not match (C, d) / (C,)")

    trace = []
    converged = False
    it = 0
    step = 1.0  # warm-started across iterations, doubled after each accept
    for it in range(max_iter + 1):
        loss, gW, gb = kernels.probe_loss_grad(X, Y, W, b, lam)
        if not np.isfinite(loss):
            raise ProbeError(f"non-finite loss at iteration {it}")
        gnorm = float(np.sqrt(np.sum(gW * gW) + np.sum(gb * gb)))
        trace.append((it, float(loss), gnorm))
        if gnorm <= tol:
            converged = True
            break
        if it == max_iter:
            break
        step = min(2.0 * step, MAX_STEP)
        target = loss - ARMIJO_C * step * gnorm * gnorm
        accepted = False
        for _ in range(MAX_HALVINGS):
            trial = kernels.probe_loss(X, Y, W - step * gW, b - step * gb, lam)
            if trial <= target:
                accepted = True
                break
            step *= 0.5
            target = loss - ARMIJO_C * step * gnorm * gnorm
        if not accepted:
            # descent direction exhausted at float precision
            break
        W = W - step * gW
        b = b - step * gb
    return ProbeModel(
        weights=W, bias=b, lam=lam, trace=trace, converged=converged, n_iter=it
    )


def predict_proba(model: ProbeModel, features) -> np.ndarray:
    """Class probabilities softmax(F W^T + b), max-stabilized per row."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != model.weights.shape[1]:
        raise ProbeError(
            f"feature width {F.shape} does not match probe d={model.weights.shape[1]}"
        )
    logits = F @ model.weights.T + model.bias
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits


def predict(model: ProbeModel, features) -> np.ndarray:
    """Hard class predictions (argmax of probabilities)."""
    return np.argmax(predict_proba(model, features), axis=1)
