"""Compare the numba kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20] [--end-to-end]

Kernel timings run in-process. ``--end-to-end`` additionally times a short
benchmark run in two subprocesses, one with ``DFOHIST_DISABLE_NUMBA=1``.
"""
import argparse
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

from dfohist import kernels
from dfohist.core import make_rng
from dfohist.problems import X_BAR, generate_instance


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases():
    data, _ = generate_instance(make_rng(0, 0))
    W = data.W
    rng = make_rng(1)
    rx = X_BAR + rng.random((5000, 5))
    rw = W[rng.integers(0, W.shape[0], 5000)] + 0.01 * rng.standard_normal((5000, 4))
    qx = X_BAR + rng.random((40, 5))
    return {
        "methanol_rk4 (21 trajectories)": (
            lambda: kernels._methanol_rk4_jit(X_BAR, W[:, 1:4].copy(), W[:, 0].copy(), 1e-3),
            lambda: kernels.methanol_rk4_numpy(X_BAR, W[:, 1:4], W[:, 0], 1e-3),
        ),
        "ball_any (40 x 21 queries, 5000 records)": (
            lambda: kernels._ball_any_jit(qx, W, rx, rw, 0.3),
            lambda: kernels.ball_any_numpy(qx, W, rx, rw, 0.3),
        ),
    }


def end_to_end():
    with tempfile.TemporaryDirectory() as tmp:
        cmd = [sys.executable, "-m", "dfohist.cli", "bench", "methanol", "--reps", "1", "--instances", "4",
               "--out-csv", os.path.join(tmp, "bench.csv")]
        for label, flag in (("numba", "0"), ("numpy", "1")):
            env = dict(os.environ, DFOHIST_DISABLE_NUMBA=flag)
            t0 = time.perf_counter()
            subprocess.run(cmd, env=env, check=True, capture_output=True)
            print(f"end-to-end bench ({label}): {time.perf_counter() - t0:.2f} s")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        print("numba unavailable or disabled; only the numpy path can be timed")
    for name, (jit_fn, np_fn) in kernel_cases().items():
        t_np = best_of(np_fn, args.repeat)
        if kernels.HAS_NUMBA:
            t_jit = best_of(jit_fn, args.repeat)
            same = np.array_equal(np.asarray(jit_fn()), np.asarray(np_fn()))
            print(f"{name}: numba {t_jit * 1e3:.3f} ms  numpy {t_np * 1e3:.3f} ms  "
                  f"speedup {t_np / t_jit:.1f}x  identical={same}")
        else:
            print(f"{name}: numpy {t_np * 1e3:.3f} ms")
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
