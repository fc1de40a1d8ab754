"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-``repeat`` time of each backend
and their ratio.
"""

import argparse
import timeit

import numpy as np

from dptcopula import _core_py

try:
    from dptcopula import _core
except ImportError:
    _core = None


def cases(rng):
    x = rng.random(200_000)
    rows = rng.integers(0, 1024, 200_000)
    cols = rng.integers(0, 1024, 200_000)
    table = rng.random((1024, 1024))
    out = np.zeros(200_000)
    r = rng.standard_normal(5_000) * 0.01
    edges = np.concatenate([[0.0], np.cumsum(rng.dirichlet(np.ones(1024)))])
    edges[-1] = 1.0
    return {
        "cell_indices": lambda m: m.cell_indices(x, 10),
        "weighted_histogram": lambda m: m.weighted_histogram(rows, cols, 1024, 1.0),
        "add_gathered": lambda m: m.add_gathered(out, table, rows, cols),
        "garch_variance": lambda m: m.garch_variance(r, 1e-6, 0.08, 0.9, 1e-4),
        "interval_overlap_matrix": lambda m: m.interval_overlap_matrix(edges, 1024),
    }


def best(func, repeat):
    return min(timeit.repeat(func, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _core is None:
        print("compiled extension not built; run: pip install -e . --no-build-isolation")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'compiled ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, call in cases(rng).items():
        tc = best(lambda: call(_core), args.repeat)
        tp = best(lambda: call(_core_py), args.repeat)
        print(f"{name:<26}{tc * 1e3:>12.3f}{tp * 1e3:>12.3f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
