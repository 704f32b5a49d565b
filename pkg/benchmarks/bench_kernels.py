#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-Python implementations.

Run as-is to time the active backend against the uncompiled reference;
set SEQEXP_PURE_NUMPY=1 to verify the package works (slower) without a
numba toolchain.
"""

import time

from seqexp import _kernels
from seqexp.presets import example1_instance
from seqexp.solver import BeliefGrid, DpStructure


def time_fn(fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_gs_sweeps(n_sweeps=200):
    inst = example1_instance()
    struct = DpStructure(inst, BeliefGrid(1e-3))
    idx, w, qd = struct.packed()

    def run(kernel):
        v = struct.payoff.copy()
        fwd = True
        for _ in range(n_sweeps):
            kernel(v, struct.payoff, inst.rho, idx, w, qd, fwd)
            fwd = not fwd
        return v

    if _kernels.USING_NUMBA:
        run(_kernels.gs_sweep)  # trigger compilation outside the timing
    fast = time_fn(run, _kernels.gs_sweep)
    slow = time_fn(run, _kernels._gs_sweep_impl, repeat=1)
    label = "numba" if _kernels.USING_NUMBA else "fallback"
    print(f"gauss-seidel sweeps x{n_sweeps}: {label} {fast:.3f}s, "
          f"pure python {slow:.3f}s, speedup {slow / fast:.1f}x")


def bench_sde_exit(n_paths=20_000):
    args = (0.5, 0.4, 0.6, 2.0, 1.0, 1e-4, n_paths, 10_000_000, 7)
    if _kernels.USING_NUMBA:
        _kernels.sde_first_exit(*((0.5, 0.4, 0.6, 2.0, 1.0, 1e-4, 100, 10_000_000, 7)))
    fast = time_fn(lambda: _kernels.sde_first_exit(*args), repeat=2)
    slow = time_fn(lambda: _kernels._sde_exit_impl(*args), repeat=1)
    label = "numba" if _kernels.USING_NUMBA else "fallback"
    print(f"sde first exit x{n_paths}: {label} {fast:.3f}s, "
          f"pure python {slow:.3f}s, speedup {slow / fast:.1f}x")


if __name__ == "__main__":
    print(f"backend: {'numba' if _kernels.USING_NUMBA else 'pure numpy/python'}")
    bench_gs_sweeps()
    bench_sde_exit()
