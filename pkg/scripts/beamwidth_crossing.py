"""Expected aligned transmit gain against angle-error variance for several square arrays."""

import argparse
import math
from pathlib import Path

import numpy as np

from beamsight.foresee import aligned_beam_expectation
from beamsight.io import write_csv
from beamsight.radio import ArrayGeometry


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 16])
    ap.add_argument("--points", type=int, default=41)
    ap.add_argument("--carrier", type=float, default=28e9)
    ap.add_argument("--out", default="out/beamwidth_crossing.csv")
    args = ap.parse_args()

    lam = 299_792_458.0 / args.carrier
    var = np.logspace(-4, 0, args.points)
    arrays = {n: ArrayGeometry.upa_xz(n, n, lam) for n in args.sizes}
    rows = []
    for v in var:
        rows.append([v] + [aligned_beam_expectation(a, math.pi / 2, math.pi / 2, v) for a in arrays.values()])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, "variance in rad^2 on each angle; columns are sqrt(N) E|a_hat^H a| at broadside",
              ["variance"] + [f"upa_{n}x{n}" for n in arrays], rows)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
