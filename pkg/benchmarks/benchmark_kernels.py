#!/usr/bin/env python3
"""Benchmark the numba and numpy round-simulation kernels on identical inputs.

The two backends must produce bit-identical tallies; this script verifies
that and reports the per-round cost of each, plus the end-to-end protocol
throughput (pregeneration included) for whichever backend is active.

Usage: python benchmarks/benchmark_kernels.py [n_rounds]
"""
import sys
import time

import numpy as np

from pmqkd.backend import active_backend, get_kernel_for
from pmqkd import ChannelModel, DriftProcess, ProtocolParams, TrainLayout, run_protocol


def make_inputs(n: int, seed: int = 7):
    rng = np.random.default_rng(seed)
    side = np.array([0.1, 0.05, 0.0])
    ia, ib = rng.integers(0, 3, n), rng.integers(0, 3, n)
    pair_tbl = np.array([[0, 3, 3], [3, 1, 3], [3, 3, 2]], dtype=np.int64)
    lam = side[ia] + side[ib]
    return (
        pair_tbl[ia, ib],
        rng.integers(0, 16, n), rng.integers(0, 16, n),
        rng.integers(0, 2, n), rng.integers(0, 2, n),
        np.full(n, 2, dtype=np.int64),
        lam, np.exp(-lam),
        np.clip((1 + np.cos(rng.uniform(0, 2 * np.pi, n))) / 2, 0, 1),
        rng.random(n), rng.random(n), rng.random(n),
        rng.random(n), rng.random(n),
    )


def time_kernel(kernel, args, repeats: int = 3):
    kernel(*args, 0.05, 1e-4, 16)  # warm-up (JIT compile for numba)
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = kernel(*args, 0.05, 1e-4, 16)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 2_000_000
    args = make_inputs(n)
    results = {}
    outputs = {}
    for name in ("numba", "numpy"):
        try:
            kernel = get_kernel_for(name)
        except ImportError:
            print(f"{name:>6}: unavailable")
            continue
        dt, out = time_kernel(kernel, args)
        results[name] = dt
        outputs[name] = out
        print(f"{name:>6}: {dt * 1e3:8.1f} ms for {n} rounds "
              f"({n / dt / 1e6:7.1f} Mrounds/s)")
    if len(outputs) == 2:
        same = all(
            np.array_equal(np.asarray(a), np.asarray(b))
            for a, b in zip(outputs["numba"], outputs["numpy"])
        )
        print(f"bit-identical outputs: {same}")
        print(f"speedup numba vs numpy: {results['numpy'] / results['numba']:.1f}x")
        if not same:
            raise SystemExit("backend outputs diverged")

    layout = TrainLayout()
    n_trains = max(1, n // layout.quantum_pulses)
    params = ProtocolParams(
        n_rounds=n_trains * layout.quantum_pulses,
        mu_total=0.2, nu_total=0.1, r_signal=0.5, r_weak=0.3, r_vacuum=0.2,
    )
    ch = ChannelModel(eta_ch=0.1, eta_d=0.5, p_d=1e-4, e_d0=0.053)
    t0 = time.perf_counter()
    tally, _ = run_protocol(params, ch, layout, DriftProcess(drift_rate=0.62),
                            n_trains, seed=1)
    dt = time.perf_counter() - t0
    print(f"end-to-end ({active_backend()} backend, pregeneration included): "
          f"{dt:.2f} s for {tally.n_rounds} rounds "
          f"({tally.n_rounds / dt / 1e6:.2f} Mrounds/s)")


if __name__ == "__main__":
    main()
