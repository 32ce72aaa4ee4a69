#!/usr/bin/env python3
"""Benchmark the recurrence kernels: numba path vs pure-numpy fallback.

Runs each kernel on representative training shapes and prints a table with
per-call times and the numba speedup.  The numpy rows are what you get with
``FEDTA_NUMBA=0``.

Usage: python benchmarks/bench_kernels.py [--batch 32] [--time 100]
       [--width 64] [--states 4] [--repeats 20]
"""

import argparse
import time

import numpy as np

from fedta import kernels


def timeit(fn, args, repeats):
    fn(*args)  # warmup (and JIT compile for the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--time", type=int, default=100)
    parser.add_argument("--width", type=int, default=64)
    parser.add_argument("--states", type=int, default=4)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    shape = (args.batch, args.time, args.width)
    u = rng.normal(1.0, 1.0, size=shape)
    gout = rng.normal(size=shape)
    alpha = rng.uniform(0.8, 0.96, args.width)
    gain = 1.0 - alpha
    A = (rng.uniform(0.5, 0.95, (args.width, args.states))
         * np.exp(1j * rng.uniform(-1.0, 1.0, (args.width, args.states))))
    B = rng.normal(size=A.shape) + 1j * rng.normal(size=A.shape)
    C = rng.normal(size=A.shape) + 1j * rng.normal(size=A.shape)

    cases = {}
    for name, impl in kernels.IMPLEMENTATIONS.items():
        out, trace = impl["lif_forward"](u, alpha, gain, 1.0, 0.5, False)
        y, p, xtrace = impl["ssm_forward"](u, A, B, C)
        cases[name] = {
            "lif_forward": (impl["lif_forward"],
                            (u, alpha, gain, 1.0, 0.5, False)),
            "lif_backward": (impl["lif_backward"],
                             (gout, trace, u, alpha, gain, 1.0, 0.5,
                              False, True, True)),
            "ssm_forward": (impl["ssm_forward"], (u, A, B, C)),
            "ssm_backward": (impl["ssm_backward"], (gout, p, xtrace, u, A, B, C)),
        }

    print(f"shapes: batch={args.batch} time={args.time} width={args.width} "
          f"states={args.states}; {args.repeats} repeats")
    print(f"numba available: {kernels.USING_NUMBA}")
    header = f"{'kernel':<14}" + "".join(f"{b:>12}" for b in cases) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for kernel_name in ("lif_forward", "lif_backward", "ssm_forward", "ssm_backward"):
        times = {}
        for backend, table in cases.items():
            fn, fargs = table[kernel_name]
            times[backend] = timeit(fn, fargs, args.repeats)
        row = f"{kernel_name:<14}" + "".join(f"{1e3 * times[b]:>10.2f}ms"
                                             for b in cases)
        if "numba" in times:
            row += f"{times['numpy'] / times['numba']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
