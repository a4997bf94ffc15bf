"""Compare the compiled kernel core against the numpy fallback.

Run from the repository root::

    python3 benchmarks/bench_backends.py [--n 4000] [--q 10] [--repeat 3]

Times the three hot kernels (cross-Gram block, kernel expansion, signed row
scatter) on both backends and checks that the results agree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from sketchkm import _backend


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--q", type=int, default=10)
    ap.add_argument("--s", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    try:
        impls = {"cython": _backend.get("cython"), "python": _backend.get("python")}
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    A = rng.standard_normal((args.s, args.q))
    B = rng.standard_normal((args.n, args.q))
    beta = rng.standard_normal((args.n, 5))
    src = rng.standard_normal((args.n, 50))
    rows = rng.integers(0, args.s, args.n).astype(np.int64)
    signs = rng.choice([-1.0, 1.0], args.n)

    def scatter(impl):
        out = np.zeros((args.s, src.shape[1]))
        impl.signed_scatter_rows(src, rows, signs, out)
        return out

    cases = {
        f"gaussian cross-gram {args.s}x{args.n}": lambda m: m.cross_kernel(0, A, B, 0.5, 0),
        f"polynomial cross-gram {args.s}x{args.n}": lambda m: m.cross_kernel(1, A, B, 1.0, 3),
        f"gaussian expansion {args.s}x{args.n}x5": lambda m: m.kernel_expansion(0, A, B, beta, 0.5, 0),
        f"signed scatter {args.n}x50": scatter,
    }
    print(f"{'kernel':<34}{'cython s':>11}{'python s':>11}{'speedup':>9}{'max diff':>11}")
    for name, fn in cases.items():
        tc, rc = best_of(lambda: fn(impls["cython"]), args.repeat)
        tp, rp = best_of(lambda: fn(impls["python"]), args.repeat)
        diff = float(np.max(np.abs(rc - rp)))
        print(f"{name:<34}{tc:>11.4f}{tp:>11.4f}{tp / tc:>8.1f}x{diff:>11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
