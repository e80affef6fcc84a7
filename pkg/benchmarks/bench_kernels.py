"""Compare the compiled kernels with their pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--repeat 5] [--n 200000]

Each kernel is timed on identical inputs through both paths and the largest
absolute difference between the outputs is reported. The RNG and
product-limit kernels agree bit for bit; the posterior kernel can differ in
the last bit because numpy and numba use different ``exp`` implementations.
The first compiled call (which includes JIT compilation) is excluded.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from stratumlab import _kernels


def _inputs(n: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    times = np.sort(np.round(rng.exponential(10.0, n), 2))
    events = (rng.random(n) < 0.7).astype(np.float64)
    weights = rng.uniform(0.2, 3.0, n)
    loglik = rng.normal(-2.0, 1.5, (n, 4))
    loglik[rng.random((n, 4)) < 0.1] = -np.inf
    loglik[:, 0] = np.maximum(loglik[:, 0], -50.0)
    return {
        "uniform_block": (np.uint64(0x5EED), 0, n, 12),
        "km_table": (times, events, weights),
        "posterior_logsumexp": (loglik,),
    }


def _max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    both = np.isfinite(a) & np.isfinite(b)
    if not np.array_equal(np.isfinite(a), np.isfinite(b)):
        return np.inf
    return float(np.max(np.abs(a[both] - b[both]), initial=0.0))


def _best(fn, args, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=200_000, help="problem size (rows)")
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions; best is reported")
    args = parser.parse_args(argv)

    numpy_k = _kernels.numpy_kernels()
    try:
        jit_k = _kernels.jit_kernels()
    except ImportError:
        jit_k = None
        print("numba not installed: timing the numpy path only")
    inputs = _inputs(args.n)

    print(f"{'kernel':<22}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}{'max |diff|':>12}")
    for name, kargs in inputs.items():
        ref = numpy_k[name](*kargs)
        t_np = _best(numpy_k[name], kargs, args.repeat)
        if jit_k is None:
            print(f"{name:<22}{t_np * 1e3:>12.2f}{'-':>12}{'-':>10}{'-':>12}")
            continue
        t0 = time.perf_counter()
        out = jit_k[name](*kargs)
        compile_s = time.perf_counter() - t0
        diff = _max_diff(ref, out)
        t_jit = _best(jit_k[name], kargs, args.repeat)
        print(
            f"{name:<22}{t_np * 1e3:>12.2f}{t_jit * 1e3:>12.2f}{t_np / t_jit:>9.1f}x{diff:>12.1e}"
            f"  (first call {compile_s:.2f}s)"
        )


if __name__ == "__main__":
    main()
