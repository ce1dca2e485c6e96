"""Time the rational-quadratic spline kernel: compiled extension vs numpy fallback.

    python3 benchmarks/bench_spline.py [--n 20000] [--bins 8] [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from cardlearn import _kernels
from cardlearn.splines import raw_to_arrays


def make_inputs(n: int, bins: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(n, 3 * bins - 1))
    w, h, d = raw_to_arrays(raw)
    return rng.uniform(0.0, 1.0, n), w, h, d


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--bins", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    x, w, h, d = make_inputs(args.n, args.bins)
    results = {}
    ref, ref_name = None, None
    for name in _kernels.available_backends():
        prev = _kernels.use_backend(name)
        try:
            out = _kernels.rq_spline(x, w, h, d)
            if ref is None:
                ref, ref_name = out, name
            else:
                err = max(float(np.max(np.abs(a - b))) for a, b in zip(out, ref))
                print(f"{name}: max abs deviation from {ref_name} = {err:.2e}")
            for grad in (False, True):
                t = min(timeit.repeat(lambda: _kernels.rq_spline(x, w, h, d, need_grad=grad), number=3, repeat=args.repeat)) / 3
                results[(name, grad)] = t
        finally:
            _kernels.use_backend(prev)
    print(f"n={args.n} bins={args.bins}")
    for (name, grad), t in results.items():
        label = "value+grad" if grad else "value"
        print(f"  {name:>7} {label:>10}: {t * 1e3:8.2f} ms  ({args.n / t / 1e6:6.2f} M evals/s)")
    if ("cython", True) in results and ("python", True) in results:
        print(f"  speedup (value+grad): {results[('python', True)] / results[('cython', True)]:.1f}x")


if __name__ == "__main__":
    main()
