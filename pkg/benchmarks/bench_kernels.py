"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from fcpl import _pykernels, kernels

try:
    from fcpl import _ckernels
except ImportError:
    _ckernels = None


def dp_inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    q = np.sort(rng.uniform(0, n / 2, n))
    r = q + rng.normal(0, 0.5, n)
    return q, r, rng.uniform(0.5, 1.0, n), np.ones(n, dtype=np.uint8)


def ap_inputs(n, seed=0):
    labels = (np.random.default_rng(seed).random(n) < 0.1).astype(np.uint8)
    return labels, int(labels.sum())


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(f"{label:<38}{best * 1e3:10.3f} ms")
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"default backend: {kernels.BACKEND}")
    impls = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled extension not built; timing the Python backend only")

    for n in (200, 1000):
        q, r, s, alive = dp_inputs(n)
        times = {name: bench(f"best_path_dp n={n} [{name}]",
                             lambda impl=impl: kernels.best_path_dp(q, r, s, alive, 3.0, impl=impl), args.repeat)
                 for name, impl in impls}
        if len(times) == 2:
            print(f"{'':<38}speed-up x{times['python'] / times['cython']:.1f}")
    for n in (10_000, 1_000_000):
        labels, npos = ap_inputs(n)
        times = {name: bench(f"average_precision n={n} [{name}]",
                             lambda impl=impl: kernels.average_precision(labels, npos, impl=impl), args.repeat)
                 for name, impl in impls}
        if len(times) == 2:
            print(f"{'':<38}speed-up x{times['python'] / times['cython']:.1f}")


if __name__ == "__main__":
    main()
