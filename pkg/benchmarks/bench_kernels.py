"""Timing comparison of the compiled kernel extension against the pure
numpy/Python fallback, with agreement checks before every measurement.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--scale small|full]

Each kernel is checked for agreement between the two implementations
first (the benchmark aborts if they disagree), then timed as the best
wall-clock over N repeats.  When the compiled extension is unavailable
only the fallback is timed.
"""

import argparse
import sys
import time

import numpy as np

from taxcl.backend import pure
from taxcl.batchdecomp import LabeledBatch, decompose_supervised
from taxcl.rng import SeededRng

try:
    from taxcl.backend import _core
except ImportError:
    _core = None


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def random_rows(rng: SeededRng, m: int, d: int) -> np.ndarray:
    Z = np.array(rng.gaussians(m * d)).reshape(m, d)
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def check(name: str, a, b, tol: float) -> None:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    mask = np.isnan(a) & np.isnan(b)
    diff = np.abs(np.where(mask, 0.0, a - b)).max() if a.size else 0.0
    if diff > tol:
        sys.exit(f"agreement check failed for {name}: max diff {diff:.3e}")


def bench_gram(sizes, repeats):
    rng = SeededRng(1)
    for m, d in sizes:
        Z = random_rows(rng, m, d)
        if _core is not None:
            check(f"gram {m}x{d}", pure.gram(Z), _core.gram(Z), 1e-13)
        yield (f"gram {m}x{d}",
               best_of(lambda: pure.gram(Z), repeats),
               best_of(lambda: _core.gram(Z), repeats) if _core else None)


def bench_jacobi(sizes, repeats):
    rng = SeededRng(2)
    for n in sizes:
        A = np.array(rng.gaussians(n * n)).reshape(n, n)
        C = (A + A.T) / 2.0
        if _core is not None:
            wp, _, _ = pure.jacobi_eigh(C, 1e-14, 64)
            wc, _, _ = _core.jacobi_eigh(C, 1e-14, 64)
            check(f"jacobi {n}", np.sort(np.asarray(wp)),
                  np.sort(np.asarray(wc)), 1e-9 * max(1.0, np.abs(C).max()))
        yield (f"jacobi {n}x{n}",
               best_of(lambda: pure.jacobi_eigh(C, 1e-14, 64), repeats),
               best_of(lambda: _core.jacobi_eigh(C, 1e-14, 64), repeats)
               if _core else None)


def bench_contrastive(sizes, repeats):
    rng = SeededRng(3)
    for m, d in sizes:
        Z = random_rows(rng, m, d)
        y = np.array([rng.randint_below(max(2, m // 4)) for _ in range(m)])
        batch = LabeledBatch(Z, y, y % 2)
        pos, tax, reg = decompose_supervised(batch).masks()
        S = pure.gram(Z)
        args = (S, pos, tax, reg, 0.2, 0.1, pure.Q_IMPORTANCE_DEBIASED, False)
        if _core is not None:
            rp, rc = pure.contrastive_terms(*args), _core.contrastive_terms(*args)
            check(f"contrastive per-anchor {m}", rp[0], rc[0], 1e-12)
            check(f"contrastive grad {m}", rp[1], rc[1], 1e-12)
        yield (f"contrastive {m}x{d}",
               best_of(lambda: pure.contrastive_terms(*args), repeats),
               best_of(lambda: _core.contrastive_terms(*args), repeats)
               if _core else None)


def bench_rng(sizes, repeats):
    for n in sizes:
        if _core is not None:
            up, sp = pure.rng_fill_uniform(n, 12345)
            uc, sc = _core.rng_fill_uniform(n, 12345)
            check(f"rng uniform {n}", up, uc, 0.0)
            if sp != sc:
                sys.exit(f"rng uniform {n}: end states differ")
            gp = pure.rng_fill_gaussian(n, 999, False, 0.0)
            gc = _core.rng_fill_gaussian(n, 999, False, 0.0)
            check(f"rng gaussian {n}", gp[0], gc[0], 0.0)
        yield (f"rng gaussian {n}",
               best_of(lambda: pure.rng_fill_gaussian(n, 999, False, 0.0),
                       repeats),
               best_of(lambda: _core.rng_fill_gaussian(n, 999, False, 0.0),
                       repeats) if _core else None)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--scale", choices=("small", "full"), default="full")
    args = ap.parse_args(argv)

    if args.scale == "full":
        gram_sizes = [(64, 16), (256, 32), (1024, 64)]
        jac_sizes = [16, 32, 64]
        con_sizes = [(64, 16), (256, 32), (512, 32)]
        rng_sizes = [10_000, 100_000]
    else:
        gram_sizes, jac_sizes = [(64, 16)], [16]
        con_sizes, rng_sizes = [(64, 16)], [10_000]

    print(f"compiled extension: "
          f"{'available' if _core is not None else 'NOT BUILT (pure only)'}")
    header = f"{'kernel':<24} {'pure':>12} {'compiled':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    rows = []
    for gen in (bench_gram(gram_sizes, args.repeats),
                bench_jacobi(jac_sizes, args.repeats),
                bench_contrastive(con_sizes, args.repeats),
                bench_rng(rng_sizes, args.repeats)):
        rows.extend(gen)
    for name, t_pure, t_core in rows:
        if t_core is None:
            print(f"{name:<24} {t_pure * 1e3:>10.3f}ms {'-':>12} {'-':>9}")
        else:
            print(f"{name:<24} {t_pure * 1e3:>10.3f}ms {t_core * 1e3:>10.3f}ms "
                  f"{t_pure / t_core:>8.1f}x")
    print("\nall agreement checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
