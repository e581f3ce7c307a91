#!/usr/bin/env python3
"""Solver against brute-force enumeration on random lattices, both kernels."""

import argparse
import time

import numpy as np

from gamelattice import solve
from gamelattice.oracle import enumerate_game_value, random_lattice


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--n-max", type=int, default=3)
    ap.add_argument("--branching", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(args.count):
        lat = random_lattice(rng, n_max=args.n_max, branching_max=args.branching)
        V = solve(lat).V
        for kernel in "HJ":
            worst = max(worst, *(abs(x - V) for x in enumerate_game_value(lat, kernel)))
    print(f"{args.count} lattices, max |V - enumeration| = {worst:.3e}, {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
