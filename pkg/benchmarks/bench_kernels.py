"""Numba vs numpy timings for the event, voxel and splat kernels.

    python benchmarks/bench_kernels.py [--size 256] [--repeat 5]

Both backends are imported side by side, so ``IDOVFI_DISABLE_NUMBA`` has no
effect here.  The first numba call (JIT compile) is excluded from the timings.
"""
import argparse
import time

import numpy as np

from idovfi import kernels
from idovfi._accel import NUMBA_AVAILABLE


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def workloads(size, seed=0):
    rng = np.random.default_rng(seed)
    dlog = rng.normal(0.0, 0.6, (size, size))
    n = size * size * 4
    xs = rng.integers(0, size, n)
    ys = rng.integers(0, size, n)
    ps = rng.choice([-1, 1], n)
    ts = np.sort(rng.random(n))
    image = rng.random((3, size, size))
    flow = rng.normal(0.0, 3.0, (2, size, size))
    weight = np.exp(-rng.random((size, size)))
    return {
        "emit": lambda k: k["emit"](dlog, 0.2, 0.0, 1.0),
        "voxel": lambda k: k["voxel"](xs, ys, ps, ts, 0.0, 1.0, 5, size, size),
        "splat": lambda k: k["splat"](image, flow, weight),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = {"numpy": {"emit": kernels.emit_events_numpy, "voxel": kernels.voxel_scatter_numpy,
                          "splat": kernels.splat_numpy}}
    if NUMBA_AVAILABLE:
        backends["numba"] = {"emit": kernels.emit_events_numba, "voxel": kernels.voxel_scatter_numba,
                             "splat": kernels.splat_numba}
    else:
        print("numba not installed; timing numpy only")

    jobs = workloads(args.size)
    print(f"{'kernel':<8}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, job in jobs.items():
        row = {}
        for backend, table in backends.items():
            job(table)  # warm-up (compiles the numba kernel)
            row[backend] = _best(lambda: job(table), args.repeat) * 1e3
        nb = row.get("numba")
        speed = f"{row['numpy'] / nb:9.1f}x" if nb else "       n/a"
        nb_s = f"{nb:12.2f}" if nb else f"{'n/a':>12}"
        print(f"{name:<8}{row['numpy']:12.2f}{nb_s}{speed}")


if __name__ == "__main__":
    main()
