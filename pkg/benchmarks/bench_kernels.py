"""Benchmark the njit kernel path against the pure-numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--n 20000] [--dim 64] [--repeats 20]

Prints per-kernel best-of-N wall times for both paths and the speedup.
Run with PROBFAS_NUMBA=0 to confirm the fallback is what you are timing
in production; this script always times both paths when numba is active.
"""

import argparse
import timeit

import numpy as np

from probfas import kernels


def make_inputs(n, dim, rng):
    logits = rng.standard_normal((n, 8))
    labels = rng.integers(0, 8, n)
    d2 = rng.uniform(0.01, 9.0, n)
    s2 = rng.uniform(0.1, 4.0, n)
    X = rng.standard_normal((n, dim))
    p = rng.standard_normal(n * dim)
    g = rng.standard_normal(n * dim)
    m = np.zeros(n * dim)
    v = np.zeros(n * dim)
    return {
        "softmax_xent": (logits, labels),
        "gaussian_nll": (d2, s2),
        "smooth_rows": (X, 3),
        "adam_step": (p.copy(), g, m.copy(), v.copy(), 1e-3, 0.9, 0.999, 1e-8, 1),
    }


def time_impl(fn, args, repeats):
    fn(*args)  # warm-up (triggers jit compilation on the njit path)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeats))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    inputs = make_inputs(args.n, args.dim, rng)
    np_impls = kernels.numpy_impls()
    nb_impls = kernels.numba_impls()

    print(f"n={args.n} dim={args.dim} repeats={args.repeats} "
          f"numba_active={kernels.NUMBA_ENABLED}")
    header = f"{'kernel':<14} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, call_args in inputs.items():
        t_np = time_impl(np_impls[name], call_args, args.repeats) * 1e3
        if nb_impls is None:
            print(f"{name:<14} {t_np:>12.3f} {'inactive':>12} {'-':>9}")
            continue
        t_nb = time_impl(nb_impls[name], call_args, args.repeats) * 1e3
        print(f"{name:<14} {t_np:>12.3f} {t_nb:>12.3f} {t_np / t_nb:>8.2f}x")

    if nb_impls is None:
        print("\nnumba path inactive (package missing or PROBFAS_NUMBA=0); "
              "only the fallback was timed.")


if __name__ == "__main__":
    main()
