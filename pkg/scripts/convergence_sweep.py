#!/usr/bin/env python3
"""Value sequences for the desk Russian contract and two contracts with interior values.

Writes one CSV per contract to the output directory and prints Aitken
estimates.  The desk Russian (M = 1.2) sits on its floor at every n, so its
differences vanish; a lower floor and the put give moving sequences.
"""

import argparse
from pathlib import Path

from gamelattice import JumpLaw, MertonParams, PayoffSpec
from gamelattice.converge import richardson, value_sequence
from gamelattice.errors import InsufficientRows

DESK = MertonParams(s0=1.0, sigma=0.2, r=0.06, lam=0.1, T=1.0, jump_law=JumpLaw.point(-0.2))
CONTRACTS = {
    "russian": PayoffSpec.russian(M=1.2, delta=0.02, r=0.06),
    "put": PayoffSpec.put(K=1.1, delta=0.02, r=0.06),
    "russian_m110": PayoffSpec.russian(M=1.1, delta=0.02, r=0.06),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[25, 50, 100, 200])
    ap.add_argument("--engine", default="quantized")
    ap.add_argument("--q", type=int, default=4)
    ap.add_argument("--contracts", nargs="+", default=sorted(CONTRACTS), choices=sorted(CONTRACTS))
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.contracts:
        table = value_sequence(DESK, CONTRACTS[name], args.n, args.engine, q=args.q)
        path = args.out / f"sweep_{name}.csv"
        path.write_text(table.to_csv(timing=True))
        print(f"{name}: wrote {path}")
        print(table.to_csv(timing=True), end="")
        try:
            ex = richardson(table)
            print(f"  aitken limit {ex.limit!r} (settled={ex.exact}), ratios {ex.ratios}")
        except InsufficientRows as exc:
            print(f"  no extrapolation: {exc}")


if __name__ == "__main__":
    main()
