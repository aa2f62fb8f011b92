"""Alpha-spending boundaries for each spending family and their grid sensitivity.

    python scripts/boundary_table.py --looks 3 --alpha 0.05
"""

import argparse
import time

import numpy as np

from adaptsurv.seq_monitor import SPENDING_FUNCTIONS, compute_boundaries


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--looks", type=int, default=3)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--sided", choices=("one", "two"), default="two")
    args = ap.parse_args()
    v = np.arange(1, args.looks + 1) / args.looks

    for spending in SPENDING_FUNCTIONS:
        c = compute_boundaries(v, args.alpha, spending, args.sided)
        print(f"{spending:<22}" + "  ".join(f"{x:8.5f}" for x in c))

    print("\nnodes  max |c - c(4001)|  seconds")
    ref = compute_boundaries(v, args.alpha, sided=args.sided)
    for nodes in (201, 401, 801, 1601, 8001):
        start = time.perf_counter()
        c = compute_boundaries(v, args.alpha, sided=args.sided, nodes=nodes)
        print(f"{nodes:>5}  {np.max(np.abs(c - ref)):.2e}          {time.perf_counter() - start:.3f}")


if __name__ == "__main__":
    main()
