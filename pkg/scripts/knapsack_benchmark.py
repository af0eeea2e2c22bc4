"""Timing of the exact knapsack solvers on random pruning-shaped instances.

Items mimic resource groups: unit or [1,0]/[2,1] resource columns and
normalized-norm values in [0, 1].

Usage: python scripts/knapsack_benchmark.py [--sizes 50,200,1000] [--trials 5]
"""

import argparse
import time

import numpy as np

from hwprune.knapsack import KnapsackInstance, greedy, solve


def instance(rng, n, mixed):
    values = rng.random(n)
    if mixed:
        kind = rng.random(n) < 0.5
        weights = np.where(kind, [[1], [0]], [[2], [1]])
    else:
        weights = rng.integers(1, 6, (2, n))
    caps = (weights.sum(axis=1) * 0.5).astype(int)
    return KnapsackInstance(values, weights, caps)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="20,50,100,200,500,1000")
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--time-limit", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'n':>6} {'kind':>8} {'time [s]':>9} {'nodes':>9} {'optimal':>8} {'gap vs greedy':>14}")
    for n in (int(s) for s in args.sizes.split(",")):
        for mixed in (True, False):
            times, nodes, proven, gain = [], [], 0, []
            for _ in range(args.trials):
                inst = instance(rng, n, mixed)
                t0 = time.perf_counter()
                sel = solve(inst, args.time_limit)
                times.append(time.perf_counter() - t0)
                nodes.append(sel.nodes)
                proven += sel.proven_optimal
                g = inst.values[greedy(inst)].sum()
                gain.append(sel.objective / g - 1 if g > 0 else 0.0)
            print(f"{n:>6} {'mixed' if mixed else 'random':>8} {np.mean(times):>9.4f} "
                  f"{int(np.mean(nodes)):>9} {proven:>4}/{args.trials:<3} {np.mean(gain):>13.2%}")


if __name__ == "__main__":
    main()
