"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--trajectories N] [--repeat R]

Each case runs once per backend to warm up (numba compiles on first call),
then R timed runs; the best time is reported. Samples are checked to be
identical across backends.
"""
import argparse
import os
import time

import numpy as np

from hitlab.chain import restrict, uniform
from hitlab.csqst import control_minimal
from hitlab.montecarlo import SimulationConfig, sample_base, sample_tracking
from hitlab.rim import RimParams, build_rim, rim_halting_csqst
from hitlab.spectral import principal_triple, separation_table

BACKENDS = ("numba", "numpy")


def _cases(n_traj):
    out = []
    for n, lam in ((1, 0.9), (2, 0.9), (3, 0.9)):
        chain = build_rim(RimParams(n, lam))
        alpha = uniform(chain)
        config = SimulationConfig(seed=1, trajectories=n_traj, horizon=4000)
        out.append((f"base rim n={n}", lambda c=chain, a=alpha, k=config: sample_base(c, a, k).tau_g))

    chain = build_rim(RimParams(2, 0.9))
    tr = principal_triple(restrict(chain))
    alpha = uniform(chain)
    table = separation_table(chain, tr, alpha, 4000)
    control = control_minimal(table)
    config = SimulationConfig(seed=2, trajectories=n_traj, horizon=4000)
    out.append(("tracking rim n=2",
                lambda: sample_tracking(chain, tr, table, control, alpha, config).tau1))

    p = RimParams(2, 0.9)
    config = SimulationConfig(seed=3, trajectories=n_traj, horizon=4000)
    out.append(("halting rim n=2", lambda: rim_halting_csqst(p, 0, config).tau_star))
    return out


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return best, result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trajectories", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    print(f"{'case':<20}{'numba s':>10}{'numpy s':>10}{'speedup':>10}  same")
    for name, fn in _cases(args.trajectories):
        times, results = {}, {}
        for b in BACKENDS:
            os.environ["HITLAB_BACKEND"] = b
            fn()
            times[b], results[b] = _time(fn, args.repeat)
        same = np.array_equal(results["numba"], results["numpy"])
        print(f"{name:<20}{times['numba']:>10.3f}{times['numpy']:>10.3f}"
              f"{times['numpy'] / times['numba']:>10.1f}  {same}")
    os.environ.pop("HITLAB_BACKEND", None)


if __name__ == "__main__":
    main()
