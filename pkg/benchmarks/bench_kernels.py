#!/usr/bin/env python3
"""Benchmark the compiled step kernel against the NumPy fallback.

Covers the three regimes that dominate the experiment suite: a small
population driven for many enforcement steps (strip absorption), a band
run with a mid-size population, and raw no-selection growth.  Both kernels
produce bit-identical output, so this is purely a throughput comparison.

    python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

import branchsel as bs
from branchsel import LBand, Strip, kernel
from branchsel._fallback import advance_step as numpy_step
from branchsel.rng import RngStream


def time_workload(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def strip_run(n_steps, seed):
    def work():
        rng = RngStream(seed, 0)
        bs.simulate(bs.init_population([4.0]), n_steps * 0.01,
                    bs.ProcessParams(drift=-1.2), Strip(0.0, 5.0),
                    [n_steps * 0.01], rng, dt=0.01, kill_record_cap=0)
    return work


def band_run(horizon, seed):
    def work():
        rng = RngStream(seed, 0)
        bs.simulate(bs.init_population([0.0]), horizon,
                    bs.ProcessParams(drift=-1.0), LBand(4.0),
                    [horizon], rng, dt=0.01, kill_record_cap=0)
    return work


def raw_growth(seed):
    def work():
        rng = RngStream(seed, 0)
        pos, clock, ids, par = (np.zeros(1), np.full(1, np.nan),
                                np.zeros(1, np.int64), np.full(1, -1, np.int64))
        step = kernel.advance_step
        next_id, t = 1, 0.0
        for _ in range(24):
            pos, clock, ids, par, _p, _s, next_id = step(
                pos, clock, ids, par, t, t + 0.5, 1.0, 0.0, 1.0,
                next_id, 1 << 22, rng)
            t += 0.5
    return work


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller workloads")
    args = ap.parse_args()

    scale = 10 if args.quick else 1
    cases = [
        ("strip, 20k steps" if not args.quick else "strip, 2k steps",
         strip_run(20_000 // scale, 11)),
        ("band L=4, horizon 80" if not args.quick else "band L=4, horizon 8",
         band_run(80.0 / scale, 12)),
        ("raw growth to t=12", raw_growth(13)),
    ]

    print(f"active kernel: {kernel.KERNEL_NAME}")
    rows = []
    for name, work in cases:
        t_active = time_workload(work)
        rows.append((name, t_active))
        print(f"  {name:28s} {t_active * 1e3:9.1f} ms")

    if kernel.HAVE_EXTENSION:
        print("forcing NumPy fallback (BRANCHSEL_PURE=1 equivalent):")
        kernel.advance_step = numpy_step
        saved = kernel.run_selected
        kernel.run_selected = None
        kernel.HAS_FUSED = False
        try:
            for (name, work), (_, t_active) in zip(cases, rows):
                t_numpy = time_workload(work)
                print(f"  {name:28s} {t_numpy * 1e3:9.1f} ms   "
                      f"speedup x{t_numpy / t_active:.1f}")
        finally:
            kernel.run_selected = saved
            kernel.HAS_FUSED = saved is not None
            from branchsel._kernel import advance_step as compiled_step
            kernel.advance_step = compiled_step


if __name__ == "__main__":
    main()
