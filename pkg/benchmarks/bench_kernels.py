"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--slots 200000] [--repeat 3]

The first numba call includes compilation and is reported separately.  The
solver differs from the numpy twin only by summation order (about 1e-12);
the simulators agree exactly.
"""
import argparse
import time

import numpy as np

from ehaoi import _kernels
from ehaoi.baselines import greedy_policy
from ehaoi.belief import enumerate_truncated_space
from ehaoi.model import ModelParams
from ehaoi.multisensor import MultiModel, bisect_multiplier, multi_simulate
from ehaoi.simulator import EpisodeConfig, simulate
from ehaoi.solver import build_kernel, rvia_solve


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--slots", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return

    params = ModelParams(0.06, 0.8, 2, 64, M=32)
    kernel = build_kernel(enumerate_truncated_space(params), params)
    conf = EpisodeConfig(args.slots, episodes=4, seed=1)
    res = rvia_solve(kernel, theta=params.theta)
    pol = res.as_policy()
    model = MultiModel.from_gamma(20, 0.15, p=0.8, B=3, delta_max=64, m_cap=32)
    relaxed = bisect_multiplier(model)
    mconf = EpisodeConfig(args.slots // 10, episodes=2, seed=1)

    cases = {
        "rvia (12672 states)": lambda nb: rvia_solve(kernel, theta=params.theta, use_numba=nb).c_star,
        f"simulate pomdp 4x{args.slots}": lambda nb: simulate(pol, params, conf, use_numba=nb).mean,
        f"simulate greedy 4x{args.slots}": lambda nb: simulate(greedy_policy(params), params, conf, use_numba=nb).mean,
        f"multi K=20 2x{mconf.slots}": lambda nb: multi_simulate(model, "relax-truncate", mconf, relaxed,
                                                                 use_numba=nb).mean,
    }
    print(f"{'case':34s} {'numpy s':>9s} {'numba s':>9s} {'jit s':>8s} {'speedup':>8s}  |diff|")
    for name, fn in cases.items():
        t = time.perf_counter()
        fn(True)
        first = time.perf_counter() - t
        t_nb, v_nb = best_of(lambda: fn(True), args.repeat)
        t_np, v_np = best_of(lambda: fn(False), args.repeat)
        print(f"{name:34s} {t_np:9.3f} {t_nb:9.3f} {first:8.2f} {t_np / t_nb:8.1f}x  {abs(v_nb - v_np):.1e}")


if __name__ == "__main__":
    main()
