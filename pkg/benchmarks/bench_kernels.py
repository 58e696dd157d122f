"""Compare the numba and numpy mixture kernels on a positivity-sized grid.

Run with ``python benchmarks/bench_kernels.py [--points N] [--atoms M] [--dims n]``.
"""

import argparse
import time

import numpy as np

from quasinoise import _accel


def make_case(points: int, atoms: int, dims: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-5, 5, size=(points, dims))
    at = rng.integers(-2, 3, size=(atoms, dims)).astype(float)
    w = rng.normal(size=atoms)
    kinds = np.array([_accel.GAUSSIAN, _accel.LAPLACE] * dims)[:dims]
    params = rng.uniform(0.3, 2.0, size=dims)
    return pts, at, w, kinds, params


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=400_000)
    parser.add_argument("--atoms", type=int, default=27)
    parser.add_argument("--dims", type=int, default=3)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    case = make_case(args.points, args.atoms, args.dims)

    results = {}
    backends = ["numpy"] + (["numba"] if _accel.NUMBA_AVAILABLE else [])
    for name in backends:
        _accel.set_backend(name)
        _accel.mixture_scaled(*(c[:10] if i == 0 else c for i, c in enumerate(case)))  # compile / warm up
        results[name] = (best_of(lambda: _accel.mixture_scaled(*case), args.repeats), _accel.mixture_scaled(*case))

    print(f"{args.points} points x {args.atoms} atoms x {args.dims} dims")
    for name, (secs, _) in results.items():
        print(f"  {name:6s} {secs * 1e3:9.1f} ms")
    if len(results) == 2:
        (s0, a0, l0), (s1, _, l1) = results["numpy"][1], results["numba"][1]
        diff = np.max(np.abs(s0 * np.exp(l0) - s1 * np.exp(l1)) / (a0 * np.exp(l0)))
        print(f"  speed-up {results['numpy'][0] / results['numba'][0]:.1f}x, max relative difference {diff:.2e}")


if __name__ == "__main__":
    main()
