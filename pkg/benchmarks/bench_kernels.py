#!/usr/bin/env python3
"""Benchmark the JIT-compiled kernels against the pure-numpy fallback.

Each backend runs in its own subprocess (the backend is chosen once at
import time via EMBSEL_NO_NUMBA), so the comparison is honest: the
fallback process never touches numba. Usage:

    python benchmarks/bench_kernels.py            # orchestrates both runs
    python benchmarks/bench_kernels.py --worker   # internal: time one backend
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKLOADS = ("probe_loss_grad", "diag_gmm_em", "dino_loss_grad")


def run_workloads(repeats):
    import numpy as np

    from embsel import kernels

    rng = np.random.default_rng(0)
    timings = {}

    # probe objective+gradient: 400 x 32, 5 classes
    X = np.ascontiguousarray(rng.normal(size=(400, 32)))
    Y = np.eye(5)[rng.integers(0, 5, 400)]
    W = np.ascontiguousarray(rng.normal(size=(5, 32)))
    b = rng.normal(size=5)
    kernels.probe_loss_grad(X, Y, W, b, 0.01)  # warm-up / compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        kernels.probe_loss_grad(X, Y, W, b, 0.01)
    timings["probe_loss_grad"] = (time.perf_counter() - t0) / repeats

    # one full EM fit: 300 x 8, 10 components
    Z = np.ascontiguousarray(rng.normal(size=(300, 8)))
    means0 = np.ascontiguousarray(Z[:10].copy())
    vars0 = np.ones((10, 8))
    weights0 = np.full(10, 0.1)
    kernels.diag_gmm_em(Z, means0, vars0, weights0, 1e-6, 1e-5, 50)
    t0 = time.perf_counter()
    for _ in range(max(1, repeats // 10)):
        kernels.diag_gmm_em(Z, means0, vars0, weights0, 1e-6, 1e-5, 50)
    timings["diag_gmm_em"] = (time.perf_counter() - t0) / max(1, repeats // 10)

    # distillation step core: 16-dim input, 8 prototypes, 6 views
    def mk(*shape):
        return np.ascontiguousarray(rng.normal(size=shape))

    args = (
        mk(16, 16), mk(16), mk(8, 16), mk(8), mk(8, 8),
        mk(16, 16), mk(16), mk(8, 16), mk(8), mk(8, 8),
        mk(8), mk(6, 16), 2, 0.1, 0.04,
    )
    kernels.dino_loss_grad(*args)
    t0 = time.perf_counter()
    for _ in range(repeats):
        kernels.dino_loss_grad(*args)
    timings["dino_loss_grad"] = (time.perf_counter() - t0) / repeats

    return {"numba": kernels.NUMBA_ENABLED, "timings": timings}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--worker", action="store_true")
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if args.worker:
        print(json.dumps(run_workloads(args.repeats)))
        return

    results = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, EMBSEL_NO_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, __file__, "--worker", "--repeats", str(args.repeats)],
            capture_output=True, text=True, env=env, check=True,
        )
        results[label] = json.loads(out.stdout.strip().split("\n")[-1])

    if results["numba"]["numba"] is not True:
        print("note: numba unavailable, both columns ran the numpy fallback")
    print(f"{'kernel':<20}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name in WORKLOADS:
        tj = results["numba"]["timings"][name]
        tp = results["numpy"]["timings"][name]
        print(f"{name:<20}{tj * 1e6:>10.1f}us{tp * 1e6:>10.1f}us{tp / tj:>9.1f}x")


if __name__ == "__main__":
    main()
