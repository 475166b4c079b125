#!/usr/bin/env python3
"""Time the numba and numpy paths of the metric kernels on the same masks.

    python benchmarks/bench_kernels.py --shape 36,256,256 --repeat 3

The first numba call includes JIT compilation and is reported separately.
"""
import argparse
import time

import numpy as np

from ivdnet import kernels
from ivdnet.data import generate_phantom


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--shape", default="36,256,256")
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    shape = tuple(int(s) for s in args.shape.split(","))

    ref = generate_phantom(args.seed, 7, shape)[1].voxels.astype(bool)
    noisy = ref ^ (np.random.default_rng(args.seed).random(shape) < 0.002)

    if not kernels.HAS_NUMBA:
        print("numba is not installed; only the numpy path can be timed")
    start = time.perf_counter()
    if kernels.HAS_NUMBA:
        labels, n = kernels.label_components_numba(noisy)
        kernels.component_stats_numba(labels, n)
        kernels.overlap_counts_numba(ref, noisy)
    compile_s = time.perf_counter() - start

    labels, n = kernels.label_components_numpy(noisy)
    cases = [
        ("label_components", kernels.label_components_numba, kernels.label_components_numpy,
         (noisy,)),
        ("component_stats", kernels.component_stats_numba, kernels.component_stats_numpy,
         (labels, n)),
        ("overlap_counts", kernels.overlap_counts_numba, kernels.overlap_counts_numpy,
         (ref, noisy)),
    ]
    print(f"mask {shape}, {n} components, best of {args.repeat}")
    if kernels.HAS_NUMBA:
        print(f"numba first-call (compile + run): {compile_s:.2f} s")
    print(f"{'kernel':<18}{'numba s':>10}{'numpy s':>10}{'speed-up':>10}")
    for name, fast, slow, fargs in cases:
        t_np = _best(lambda: slow(*fargs), args.repeat)
        if kernels.HAS_NUMBA:
            t_nb = _best(lambda: fast(*fargs), args.repeat)
            print(f"{name:<18}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<18}{'-':>10}{t_np:>10.4f}{'-':>10}")


if __name__ == "__main__":
    main()
