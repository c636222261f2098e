"""Compare the compiled barrier kernel with the numpy fallback.

Run after building the extension (``python setup.py build_ext --inplace``):

    python benchmarks/bench_kernels.py [--repeat 200]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from lowrank_stealing import _kernels_py

try:
    from lowrank_stealing import _kernels
except ImportError:
    _kernels = None


def make_inputs(m: int, n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    R = rng.dirichlet(np.ones(n), size=m) * rng.uniform(0.5, 1.5, size=(m, 1))
    alpha = np.full(m, 1.0 / R.sum(axis=1).mean() / m)
    floor = np.full(n, 1e-12)
    logz = np.log(rng.dirichlet(np.ones(n)))
    return alpha, np.ascontiguousarray(R), floor, logz


def bench(impl, args, repeat: int) -> float:
    return min(timeit.repeat(lambda: impl(*args), number=1, repeat=repeat)) * 1e6


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the numpy timings are shown")
    print(f"{'kernel':<14}{'m':>4}{'n':>8}{'numpy us':>12}{'cython us':>12}{'speedup':>9}")
    for m, n in [(2, 1024), (3, 2048), (4, 8192)]:
        alpha, R, floor, logz = make_inputs(m, n)
        cases = {
            "barrier": (alpha, R, floor, logz, 6.0, 20.0),
            "barrier-val": (alpha, R, floor, logz, 6.0, 20.0, False),
        }
        for name, a in cases.items():
            ref = _kernels_py.barrier_eval
            t_py = bench(ref, a, args.repeat)
            if _kernels is not None:
                fast = _kernels.barrier_eval
                v0, v1 = ref(*a)[0], fast(*a)[0]
                assert np.isclose(v0, v1, rtol=1e-10), (name, v0, v1)
                t_cy = bench(fast, a, args.repeat)
                print(f"{name:<14}{m:>4}{n:>8}{t_py:>12.1f}{t_cy:>12.1f}{t_py / t_cy:>8.2f}x")
            else:
                print(f"{name:<14}{m:>4}{n:>8}{t_py:>12.1f}{'-':>12}{'-':>9}")


if __name__ == "__main__":
    main()
