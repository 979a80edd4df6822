"""Time the numba and pure-numpy paths of the two hot kernels.

Usage: python benchmarks/bench_kernels.py [--draws N] [--pairs M] [--repeat R]

The first numba call compiles (or loads the on-disk cache) and is excluded.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from uavisl import _kernels
from uavisl.exact import exact_sinr_batch
from uavisl.scenario import reference_scenario


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def sinr_case(draws: int, rng):
    cfg = reference_scenario()
    lo, hi = cfg.device_pos.min(axis=0) - 300.0, cfg.device_pos.max(axis=0) + 300.0
    q = rng.uniform(lo, hi, size=(draws, 2))
    k = rng.integers(0, cfg.num_devices, size=draws)
    p = rng.uniform(0.1, 1.0, size=draws) * cfg.uav_power_cap
    return lambda accel: exact_sinr_batch(cfg, q, k, p, accel=accel)


def p5_case(pairs: int, rng):
    H2 = 100.0 ** 2
    q0 = rng.uniform(0.0, 500.0, size=(pairs, 2))
    lpos = rng.uniform(0.0, 500.0, size=(pairs, 2))
    tpos = np.array([250.0, 250.0])
    dq = rng.normal(0.0, 5.0, size=(pairs, 2))
    D0l = H2 + ((q0 - lpos) ** 2).sum(axis=1)
    D0t = H2 + ((q0 - tpos) ** 2).sum(axis=1)
    q = q0 + dq
    e = H2 + ((q - lpos) ** 2).sum(axis=1)
    u = H2 + ((q - tpos) ** 2).sum(axis=1)
    p = rng.uniform(0.1, 1.0, size=pairs)
    phi, rho, nu = (rng.uniform(0.5, 2.0, size=pairs) * s for s in (1e3, 1e2, 1e-2))
    lk = rng.uniform(1e-4, 1e-3, size=pairs)
    args = (q, e, u, lpos, tpos, H2, D0l, D0t, p, phi, rho, nu, lk, 1e-5, 1e-9, 1e-12, 1e-3)
    return lambda accel: _kernels.p5_pair_terms(*args, accel=accel)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--draws", type=int, default=10_000)
    ap.add_argument("--pairs", type=int, default=2_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    if not _kernels._HAVE_NUMBA:
        print("numba not installed: only the numpy path is timed")
    cases = [("exact_sinr_batch", args.draws, sinr_case(args.draws, rng)),
             ("p5_pair_terms", args.pairs, p5_case(args.pairs, rng))]
    print(f"{'kernel':<18} {'size':>8} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  max rel diff")
    for name, size, fn in cases:
        ref = fn(False)
        t_np = best_of(lambda: fn(False), args.repeat)
        if not _kernels._HAVE_NUMBA:
            print(f"{name:<18} {size:>8} {t_np * 1e3:>10.2f} {'-':>10} {'-':>8}")
            continue
        got = fn(True)  # compile or cache load
        t_nb = best_of(lambda: fn(True), args.repeat)
        diff = 0.0
        for a, b in zip(ref, got):
            ok = np.isfinite(a) & np.isfinite(b)
            scale = np.maximum(np.abs(a[ok]), 1e-300)
            if ok.any():
                diff = max(diff, float(np.max(np.abs(a[ok] - b[ok]) / scale)))
        print(f"{name:<18} {size:>8} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
