"""Compare the compiled tilted-moment kernels with the NumPy fallback.

Usage::

    python benchmarks/bench_kernels.py [--sizes 1000 65536 524288] [--repeat 5]

Sizes are numbers of edges per call; one EP sweep on an H x W image calls a
kernel four times with about ``H * W / 2`` edges each. Also times one full
denoising sweep with each backend by toggling the module-level kernel table.
"""
import argparse
import time

import numpy as np

from eptv import _kernels_py, priors

try:
    from eptv import _kernels
except ImportError:  # extension not built
    _kernels = None

CASES = {
    "l1tv": ("l1tv_moments", (0.032,)),
    "mog2": ("mog2_moments", (0.8, 3400.0, 11.0)),
    "bg": ("bg_moments", (0.85, 2800.0)),
}


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(sizes, repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':6} {'edges':>8} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for size in sizes:
        m = rng.normal(0.0, 30.0, size)
        c = np.exp(rng.normal(3.0, 2.0, size))
        for name, (func, theta) in CASES.items():
            t_py = best_time(lambda: getattr(_kernels_py, func)(m, c, *theta), repeat)
            if _kernels is None:
                print(f"{name:6} {size:8d} {1e3 * t_py:10.2f} {'n/a':>12} {'':>8}")
                continue
            t_c = best_time(lambda: getattr(_kernels, func)(m, c, *theta), repeat)
            print(f"{name:6} {size:8d} {1e3 * t_py:10.2f} {1e3 * t_c:12.2f} {t_py / t_c:8.1f}")


def bench_sweep(size, repeat):
    from eptv import EPConfig, Identity, L1TV, run_ep

    rng = np.random.default_rng(1)
    y = rng.normal(100.0, 10.0, size * size)
    op = Identity((size, size))
    cfg = EPConfig(max_iterations=1, mean_change_tol=None)
    backends = [("numpy", _kernels_py)] + ([("compiled", _kernels)] if _kernels is not None else [])
    saved = priors.kernels
    try:
        for label, module in backends:
            priors.kernels = module
            t = best_time(lambda: run_ep(y, op, 100.0, L1TV(0.032), cfg), repeat)
            print(f"one l1tv sweep, {size}x{size}, {label}: {1e3 * t:.1f} ms")
    finally:
        priors.kernels = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[1000, 65536, 524288])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--image", type=int, default=256, help="side of the image for the sweep timing")
    args = parser.parse_args()
    bench_kernels(args.sizes, args.repeat)
    bench_sweep(args.image, args.repeat)


if __name__ == "__main__":
    main()
