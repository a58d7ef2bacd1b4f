#!/usr/bin/env python3
"""Timing and agreement of the three lateral-input evaluators.

The naive per-neuron loop is the reference. The FFT and dense-matrix paths
must match it to round-off; this script reports how far apart they are and
how long a batched step takes for each, which is what the "auto" mode uses to
pick between them.
"""

import argparse
import time

import numpy as np

from scfusion.core import AreaParams, LateralOperator, lateral_input, lateral_kernel


def bench(fn, repeat):
    fn()
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[9, 17, 25, 33, 49])
    parser.add_argument("--batch", type=int, default=64)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    print(" grid   naive(ms)   fft(ms)   matrix(ms)  max|fft-naive|  max|matrix-naive|")
    for n in args.sizes:
        k = lateral_kernel((n, n), AreaParams())
        z = rng.random((args.batch, n, n))
        fft = LateralOperator(k, "fast")
        mat = LateralOperator(k, "matrix")
        ref = lateral_input(z[0], k, "naive")
        t_naive = bench(lambda: lateral_input(z[0], k, "naive"), 1) * 1e3
        t_fft = bench(lambda: fft.apply(z), 20) * 1e3
        t_mat = bench(lambda: mat.apply(z), 20) * 1e3
        e_fft = np.max(np.abs(fft.apply(z[:1])[0] - ref))
        e_mat = np.max(np.abs(mat.apply(z[:1])[0] - ref))
        print(f"{n:5d}  {t_naive:10.1f}  {t_fft:8.3f}  {t_mat:10.3f}  {e_fft:14.1e}  {e_mat:17.1e}")
    print(f"(fft and matrix timings are per batch of {args.batch}; naive is one grid)")


if __name__ == "__main__":
    main()
