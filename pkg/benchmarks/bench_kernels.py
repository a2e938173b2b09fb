"""Compiled vs pure-Python kernels on one grid model.

    python benchmarks/bench_kernels.py --size 16 --states 8 --repeats 5
"""
import argparse
import time

import numpy as np

from mrftrees import kernels
from mrftrees.model import PotentialSpec, build_grid_mrf
from mrftrees.samplers import run_chain


def bench(mrf, scheme, backend, n_iters, repeats):
    best = float("inf")
    for r in range(repeats):
        t0 = time.perf_counter()
        run_chain(mrf, scheme, n_iters, burn_in=0, seed=r, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best / n_iters


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--states", type=int, default=8)
    ap.add_argument("--iters", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    obs = np.random.default_rng(0).integers(0, args.states, (args.size, args.size))
    mrf = build_grid_mrf(args.size, args.size, args.states, PotentialSpec("potts", beta=1.0, alpha=0.5), obs)
    backends = ["python"] + (["cython"] if "cython" in kernels.available() else [])
    print(f"{args.size}x{args.size} grid, {args.states} states; seconds per iteration (best of {args.repeats})")
    print(f"{'scheme':8}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for scheme in ("pg", "cb", "ts"):
        t = [bench(mrf, scheme, b, args.iters, args.repeats) for b in backends]
        line = f"{scheme:8}" + "".join(f"{v:12.2e}" for v in t)
        if len(t) > 1:
            line += f"{t[0] / t[1]:11.1f}x"
        print(line)
    if "cython" not in kernels.available():
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
