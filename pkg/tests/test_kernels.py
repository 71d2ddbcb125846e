import os
import subprocess
import sys

import numpy as np
import pytest

from embsel import kernels


def random_probe_inputs(seed=0, n=40, d=5, C=3):
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(rng.normal(size=(n, d)))
    Y = np.eye(C)[rng.integers(0, C, n)]
    W = np.ascontiguousarray(rng.normal(size=(C, d)))
    b = rng.normal(size=C)
    return X, Y, W, b


def test_env_flag_disables_jit():
    env = dict(os.environ, EMBSEL_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from embsel import kernels; print(kernels.NUMBA_ENABLED)"],
        capture_output=True, text=True, env=env,
    )
    assert out.stdout.strip() == "False"


@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba path disabled")
def test_probe_kernels_agree_across_backends():
    X, Y, W, b = random_probe_inputs()
    jit = kernels.probe_loss_grad(X, Y, W, b, 0.03)
    py = kernels.probe_loss_grad_py(X, Y, W, b, 0.03)
    assert jit[0] == pytest.approx(py[0], rel=1e-12)
    assert np.allclose(jit[1], py[1], rtol=1e-12, atol=1e-14)
    assert np.allclose(jit[2], py[2], rtol=1e-12, atol=1e-14)
    assert kernels.probe_loss(X, Y, W, b, 0.03) == pytest.approx(py[0], rel=1e-12)


@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba path disabled")
def test_gmm_kernel_agrees_across_backends():
    rng = np.random.default_rng(1)
    Z = np.ascontiguousarray(rng.normal(size=(60, 3)))
    means0 = np.ascontiguousarray(Z[:4].copy())
    vars0 = np.ones((4, 3))
    weights0 = np.full(4, 0.25)
    jit = kernels.diag_gmm_em(Z, means0, vars0, weights0, 1e-6, 1e-5, 200)
    py = kernels.diag_gmm_em_py(Z, means0.copy(), vars0.copy(), weights0.copy(),
                                1e-6, 1e-5, 200)
    assert jit[4] == pytest.approx(py[4], rel=1e-10)  # log-likelihood
    assert jit[5] == py[5]  # iterations
    assert np.allclose(jit[3], py[3], rtol=1e-9, atol=1e-12)  # responsibilities


@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba path disabled")
def test_dino_kernel_agrees_across_backends():
    rng = np.random.default_rng(2)

    def mk(*shape):
        return np.ascontiguousarray(rng.normal(size=shape))

    args = (
        mk(5, 6), mk(5), mk(4, 5), mk(4), mk(3, 4),
        mk(5, 6), mk(5), mk(4, 5), mk(4), mk(3, 4),
        mk(3), mk(6, 6), 2, 0.1, 0.04,
    )
    jit = kernels.dino_loss_grad(*args)
    py = kernels.dino_loss_grad_py(*args)
    assert jit[0] == pytest.approx(py[0], rel=1e-12)
    for a, b in zip(jit[1:6], py[1:6]):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-13)
    assert np.allclose(jit[6], py[6], rtol=1e-12, atol=1e-14)
