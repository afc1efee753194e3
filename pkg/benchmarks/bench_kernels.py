"""Time the compiled and numpy exponential-convolution kernels.

    python benchmarks/bench_kernels.py [--voxels 4096] [--frames 65] [--repeat 5]

Prints one line per (kernel, backend) with the best wall time, then the
speed-up and the largest disagreement between the two backends.
"""
import argparse
import time

import numpy as np

from dcepk.kernels import get_backend


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--voxels", type=int, default=4096)
    ap.add_argument("--frames", type=int, default=65)
    ap.add_argument("--batches", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    t = np.arange(args.frames) * 6.5
    cp = rng.uniform(0, 5, (args.batches, args.frames))
    kep = rng.uniform(1e-4, 0.2, (args.batches, args.voxels))  # spans the series branch
    g = rng.normal(size=(args.batches, args.voxels, args.frames))

    try:
        backends = {"python": get_backend("python"), "cython": get_backend("cython")}
    except ImportError:
        backends = {"python": get_backend("python")}
        print("compiled extension not built; timing the numpy fallback only")

    cases = {
        "expconv": lambda k: k.expconv(cp, t, kep),
        "expconv+dkep": lambda k: k.expconv(cp, t, kep, with_derivative=True),
        "expconv_vjp": lambda k: k.expconv_vjp(cp, t, kep, g),
    }
    print(f"{args.batches} x {args.voxels} voxels, {args.frames} frames, best of {args.repeat}")
    for name, fn in cases.items():
        timing = {b: best_of(lambda: fn(k), args.repeat) for b, k in backends.items()}
        for b, sec in timing.items():
            print(f"  {name:<14s} {b:<7s} {sec * 1e3:9.2f} ms")
        if len(backends) == 2:
            a, b = fn(backends["python"]), fn(backends["cython"])
            a = np.concatenate([np.ravel(x) for x in a if x is not None]) if isinstance(a, tuple) else np.ravel(a)
            b = np.concatenate([np.ravel(x) for x in b if x is not None]) if isinstance(b, tuple) else np.ravel(b)
            diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
            print(f"  {name:<14s} speed-up {timing['python'] / timing['cython']:6.1f}x   max rel diff {diff:.1e}")


if __name__ == "__main__":
    main()
