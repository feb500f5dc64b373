"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Each row is the
best-of-N mean time per call, in microseconds, and the speed-up of the
compiled version.
"""
import argparse
import timeit

import numpy as np

from laneformer import _kernels_py

try:
    from laneformer import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng):
    for n in (4, 7, 25, 60):
        cost = rng.normal(size=(n, n))
        yield f"solve_lap n={n}", "solve_lap", (cost,)
    for n in (7, 25):
        start = rng.permutation(n).astype(np.int64)
        allowed = rng.uniform(size=(n, n)) < 0.3
        allowed[np.arange(n), start] = True
        yield f"lexmin_matching n={n}", "lexmin_matching", (allowed, start)
    lane = np.column_stack([np.linspace(20, 100, 72), np.linspace(63, 10, 72)])
    yield "raster_polyline 64x128 w=2.46", "raster_polyline", (lane, 64, 128, 1.23)
    yield "raster_polyline 590x1640 w=30", "raster_polyline", (lane * [12.8, 9.2], 590, 1640, 15.0)


def bench(fn, args, repeat, number):
    times = timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)
    return min(times) / number * 1e6


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=50)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<32} {'python (us)':>12} {'cython (us)':>12} {'speed-up':>9}")
    for label, name, call_args in cases(rng):
        t_py = bench(getattr(_kernels_py, name), call_args, args.repeat, args.number)
        if _kernels is None:
            print(f"{label:<32} {t_py:>12.1f} {'n/a':>12} {'n/a':>9}")
            continue
        t_c = bench(getattr(_kernels, name), call_args, args.repeat, args.number)
        print(f"{label:<32} {t_py:>12.1f} {t_c:>12.1f} {t_py / t_c:>8.1f}x")


if __name__ == "__main__":
    main()
