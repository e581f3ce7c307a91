#!/usr/bin/env python3
"""Monte Carlo saddle check of the extracted strategies on a CRR game put."""

import argparse
import json

from gamelattice import MertonParams, PayoffSpec, solve
from gamelattice.lattice import build_exact
from gamelattice.oracle import McConfig, saddle_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--strike", type=float, default=1.1)
    ap.add_argument("--delta", type=float, default=0.02)
    ap.add_argument("--lam", type=float, default=0.0)
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--deviations", type=int, default=20)
    ap.add_argument("--kernel", choices=["H", "J"], default="H")
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()

    params = MertonParams(s0=1.0, sigma=0.2, r=0.06, lam=args.lam, T=1.0)
    payoff = PayoffSpec.put(K=args.strike, delta=args.delta, r=params.r)
    lattice = build_exact(params, payoff, args.n)
    report = saddle_check(params, payoff, lattice, solve(lattice), McConfig(args.paths, args.seed),
                          args.deviations, args.kernel)
    for e in report["deviations"]:
        gap = e["estimate"] - report["value"]
        print(f"{e['side']:>8} {e['index']:>3}  est {e['estimate']:.6f}  se {e['std_error']:.6f}  "
              f"gap/se {gap / e['std_error'] if e['std_error'] else 0.0:+7.2f}  {'ok' if e['ok'] else 'VIOLATION'}")
    print(json.dumps({k: report[k] for k in ("value", "kernel", "n", "violations", "passed")}))


if __name__ == "__main__":
    main()
