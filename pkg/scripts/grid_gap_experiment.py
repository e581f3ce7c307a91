#!/usr/bin/env python3
"""Terms of the grid-gap bound over a range of step counts."""

import argparse

from gamelattice import JumpLaw, MertonParams, PayoffSpec
from gamelattice.converge import grid_gap_bound
from gamelattice.oracle import McConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[50, 100, 200])
    ap.add_argument("--lam", type=float, default=0.1)
    ap.add_argument("--paths", type=int, default=100_000)
    args = ap.parse_args()
    params = MertonParams(s0=1.0, sigma=0.2, r=0.06, lam=args.lam, T=1.0, jump_law=JumpLaw.point(-0.2))
    payoff = PayoffSpec.russian(M=1.2, delta=0.02, r=0.06)
    print("n,term1,term2,term3_proxy,total")
    prev = None
    for n in args.n:
        b = grid_gap_bound(params, payoff, n, McConfig(n_paths=args.paths))
        print(f"{n},{b['term1']:.6g},{b['term2']:.6g},{b['term3_proxy']:.6g},{b['total']:.6g}")
        if prev is not None:
            print(f"#  term1 ratio {prev['term1'] / b['term1']:.4f}, term2 ratio {prev['term2'] / b['term2']:.4f}")
        prev = b


if __name__ == "__main__":
    main()
