"""Hot numeric kernels, JIT-compiled with numba when available.

The three inner loops that dominate runtime (EM for the mixture-based
transfer estimator, the probe's full-batch objective, and the
student-teacher distillation step) live here as plain numpy functions and
are wrapped with ``numba.njit`` at import time. Set ``EMBSEL_NO_NUMBA=1``
(or numba's own ``NUMBA_DISABLE_JIT=1``) to force the pure-numpy path;
the fallback runs the very same source, so results are identical.

The undecorated functions stay importable under a ``*_py`` alias for the
benchmark in ``benchmarks/bench_kernels.py`` and for the backend-agreement
tests.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "probe_loss",
    "probe_loss_grad",
    "diag_gmm_em",
    "dino_loss_grad",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


def _numba_requested() -> bool:
    if os.environ.get("EMBSEL_NO_NUMBA", "").strip() not in ("", "0"):
        return False
    if os.environ.get("NUMBA_DISABLE_JIT", "").strip() not in ("", "0"):
        return False
    return True


def _softmax_rows(logits):
    """Row-wise softmax, stabilized by per-row max subtraction."""
    n, c = logits.shape
    out = np.empty((n, c))
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(c):
            v = np.exp(logits[i, j] - m)
            out[i, j] = v
            s += v
        for j in range(c):
            out[i, j] /= s
    return out


def _probe_loss(X, Y, W, b, lam):
    """Mean multinomial NLL + (lam/2)*||W||_F^2 (bias unpenalized)."""
    n = X.shape[0]
    logits = np.dot(X, W.T)
    logits = logits + b.reshape(1, -1)
    c = logits.shape[1]
    loss = 0.0
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(c):
            s += np.exp(logits[i, j] - m)
        lse = m + np.log(s)
        for j in range(c):
            if Y[i, j] != 0.0:
                loss -= Y[i, j] * (logits[i, j] - lse)
    loss = loss / n + 0.5 * lam * np.sum(W * W)
    return loss


def _probe_loss_grad(X, Y, W, b, lam):
    """Objective of :func:`_probe_loss` plus its gradient in (W, b)."""
    n = X.shape[0]
    logits = np.dot(X, W.T)
    logits = logits + b.reshape(1, -1)
    P = _softmax_rows(logits)
    c = P.shape[1]
    loss = 0.0
    for i in range(n):
        for j in range(c):
            if Y[i, j] != 0.0:
                loss -= Y[i, j] * np.log(P[i, j])
    loss = loss / n + 0.5 * lam * np.sum(W * W)
    R = (P - Y) / n
    gW = np.dot(R.T, X) + lam * W
    gb = np.sum(R, axis=0)
    return loss, gW, gb


def _diag_gmm_em(Z, means0, vars0, weights0, var_floor, rel_tol, max_iter):
    """EM for a diagonal-covariance Gaussian mixture.

    Runs from the provided initialization until the relative change of the
    mean log-likelihood drops below ``rel_tol`` or ``max_iter`` sweeps.
    Returns (weights, means, vars, responsibilities, mean log-likelihood,
    iterations, converged flag as 0/1).
    """
    n, d = Z.shape
    k = means0.shape[0]
    means = means0.copy()
    vars_ = np.maximum(vars0.copy(), var_floor)
    weights = weights0.copy()
    resp = np.zeros((n, k))
    ll_prev = -np.inf
    ll = -np.inf
    converged = 0
    it = 0
    for it in range(1, max_iter + 1):
        # E-step in log space
        logw = np.log(np.maximum(weights, 1e-300))
        logp = np.empty((n, k))
        for j in range(k):
            const = 0.0
            for t in range(d):
                const += np.log(vars_[j, t])
            const = -0.5 * (const + d * _LOG_2PI)
            for i in range(n):
                q = 0.0
                for t in range(d):
                    diff = Z[i, t] - means[j, t]
                    q += diff * diff / vars_[j, t]
                logp[i, j] = logw[j] + const - 0.5 * q
        ll = 0.0
        for i in range(n):
            m = logp[i, 0]
            for j in range(1, k):
                if logp[i, j] > m:
                    m = logp[i, j]
            s = 0.0
            for j in range(k):
                s += np.exp(logp[i, j] - m)
            lse = m + np.log(s)
            ll += lse
            for j in range(k):
                resp[i, j] = np.exp(logp[i, j] - lse)
        ll /= n
        if (
            np.isfinite(ll)
            and np.isfinite(ll_prev)
            and abs(ll - ll_prev) <= rel_tol * max(1.0, abs(ll_prev))
        ):
            converged = 1
            break
        ll_prev = ll
        # M-step
        for j in range(k):
            nk = 0.0
            for i in range(n):
                nk += resp[i, j]
            weights[j] = nk / n
            denom = nk + 1e-32
            for t in range(d):
                mu = 0.0
                for i in range(n):
                    mu += resp[i, j] * Z[i, t]
                mu /= denom
                means[j, t] = mu
                v = 0.0
                for i in range(n):
                    diff = Z[i, t] - mu
                    v += resp[i, j] * diff * diff
                v /= denom
                if v < var_floor:
                    v = var_floor
                vars_[j, t] = v
    return weights, means, vars_, resp, ll, it, converged


def _dino_loss_grad(
    sw1, sb1, sw2, sb2, sproto,
    tw1, tb1, tw2, tb2, tproto,
    center, views, n_global, tau_s, tau_t,
):
    """Distillation loss and student gradient for one sample's views.

    ``views`` is (V, input_dim) with the first ``n_global`` rows being the
    global views. The teacher sees only global views; its centered logits
    are sharpened at ``tau_t`` and treated as constants. Loss is the mean
    cross-entropy over ordered (teacher global i, student view j) pairs
    with j != i whenever j is itself a global view.

    Returns (loss, gW1, gb1, gW2, gb2, gP, teacher_global_logits).
    """
    V = views.shape[0]
    K = sproto.shape[0]

    # teacher forward on global views only, no gradient tracking
    t_logits = np.empty((n_global, K))
    for i in range(n_global):
        z = np.tanh(np.dot(tw1, views[i]) + tb1)
        e = np.dot(tw2, z) + tb2
        t_logits[i] = np.dot(tproto, e)
    p = _softmax_rows((t_logits - center.reshape(1, -1)) / tau_t)

    # student forward on every view, keeping activations for backprop;
    # log-softmax keeps the cross entropy finite even when q underflows
    h_act = np.empty((V, sb1.shape[0]))
    e_act = np.empty((V, sb2.shape[0]))
    s_logits = np.empty((V, K))
    for j in range(V):
        h = np.tanh(np.dot(sw1, views[j]) + sb1)
        e = np.dot(sw2, h) + sb2
        h_act[j] = h
        e_act[j] = e
        s_logits[j] = np.dot(sproto, e)
    s_logits = s_logits / tau_s
    log_q = np.empty((V, K))
    q = np.empty((V, K))
    for j in range(V):
        m = s_logits[j, 0]
        for kk in range(1, K):
            if s_logits[j, kk] > m:
                m = s_logits[j, kk]
        s = 0.0
        for kk in range(K):
            s += np.exp(s_logits[j, kk] - m)
        lse = m + np.log(s)
        for kk in range(K):
            log_q[j, kk] = s_logits[j, kk] - lse
            q[j, kk] = np.exp(log_q[j, kk])

    n_pairs = n_global * (V - 1)
    loss = 0.0
    dlogits = np.zeros((V, K))
    for i in range(n_global):
        for j in range(V):
            if j == i and j < n_global:
                continue
            ce = 0.0
            for kk in range(K):
                if p[i, kk] > 0.0:
                    ce -= p[i, kk] * log_q[j, kk]
            loss += ce
            for kk in range(K):
                dlogits[j, kk] += (q[j, kk] - p[i, kk]) / tau_s
    loss /= n_pairs
    dlogits /= n_pairs

    gW1 = np.zeros_like(sw1)
    gb1 = np.zeros_like(sb1)
    gW2 = np.zeros_like(sw2)
    gb2 = np.zeros_like(sb2)
    gP = np.zeros_like(sproto)
    for j in range(V):
        dl = dlogits[j]
        gP += np.outer(dl, e_act[j])
        de = np.dot(sproto.T, dl)
        gW2 += np.outer(de, h_act[j])
        gb2 += de
        dh = np.dot(sw2.T, de)
        dz = dh * (1.0 - h_act[j] * h_act[j])
        gW1 += np.outer(dz, views[j])
        gb1 += dz
    return loss, gW1, gb1, gW2, gb2, gP, t_logits


# pure-python aliases kept for the benchmark and backend-agreement tests
probe_loss_py = _probe_loss
probe_loss_grad_py = _probe_loss_grad
diag_gmm_em_py = _diag_gmm_em
dino_loss_grad_py = _dino_loss_grad

NUMBA_ENABLED = False
if _numba_requested():
    try:
        from numba import njit

        _jit = njit(cache=True, fastmath=False)
        _softmax_rows = _jit(_softmax_rows)
        probe_loss = _jit(_probe_loss)
        probe_loss_grad = _jit(_probe_loss_grad)
        diag_gmm_em = _jit(_diag_gmm_em)
        dino_loss_grad = _jit(_dino_loss_grad)
        NUMBA_ENABLED = True
    except ImportError:
        probe_loss = _probe_loss
        probe_loss_grad = _probe_loss_grad
        diag_gmm_em = _diag_gmm_em
        dino_loss_grad = _dino_loss_grad
else:
    probe_loss = _probe_loss
    probe_loss_grad = _probe_loss_grad
    diag_gmm_em = _diag_gmm_em
    dino_loss_grad = _dino_loss_grad
