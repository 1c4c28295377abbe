#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Both paths are called explicitly through ``use_numba=``, so the S2QN_NUMBA
flag does not matter here. Each case also checks the two outputs agree.
"""
import argparse
import json
import time

import numpy as np

from s2qn import _kernels


def _spd(rng, n):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + np.eye(n)


def _time(fn, repeat):
    fn()  # warm up, includes jit compilation
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    for n in (16, 64, 128):
        M = _spd(rng, n)
        B = rng.standard_normal((n, 8))
        yield f"pivoted_cholesky n={n}", lambda nb, M=M: _kernels.pivoted_cholesky(M, 1e-12, use_numba=nb)[0]
        L, piv, _ = _kernels.pivoted_cholesky(M, 1e-12, use_numba=False)
        yield f"cholesky_solve n={n} rhs=8", lambda nb, L=L, piv=piv, B=B: _kernels.cholesky_solve(L, piv, B, use_numba=nb)
    for (b, j, h, K) in ((8, 2, 8, 1), (32, 3, 12, 1), (16, 4, 16, 2)):
        a = rng.standard_normal((b, j, h, h))
        yield f"im2col B={b} J={j} {h}x{h} K={K}", lambda nb, a=a, K=K: _kernels.im2col(a, K, use_numba=nb)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if not _kernels.HAS_NUMBA:
        print("numba is not importable; only the numpy path exists")
        return 1
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'case':<34} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, fn in cases(rng):
        np.testing.assert_allclose(fn(True), fn(False), rtol=1e-10, atol=1e-12)
        t_np = _time(lambda: fn(False), args.repeat)
        t_nb = _time(lambda: fn(True), args.repeat)
        rows.append({"case": name, "numpy_s": t_np, "numba_s": t_nb})
        print(f"{name:<34} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
