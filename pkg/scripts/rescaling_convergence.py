"""Error of the rescaled Galton-Watson cumulant against the continuous flow.

    python scripts/rescaling_convergence.py [--t 1.0] [--out rescaling.csv]
"""
import argparse
import csv

import numpy as np

from cbilab import discrete, quadratic, stable
from cbilab.cumulant import solve_v


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--out", default="rescaling.csv")
    args = p.parse_args()
    lam = np.array([0.5, 1.0, 2.0, 4.0])
    rows = []
    for name, mech in (("quadratic", quadratic(0.0, 1.0)), ("stable_0.5", stable(1.0, 0.5, 0.2))):
        exact = solve_v(mech, lam, args.t)
        for k in (10, 100, 1000, 10_000):
            fam = discrete.mechanism_to_offspring(mech, k)
            err = np.abs(discrete.vk_recursion(fam, args.t, lam) - exact)
            rows += [(name, k, L, e) for L, e in zip(lam, err)]
            print(f"{name:<11} k={k:<6} max err {err.max():.3e}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mechanism", "k", "lambda", "abs_err"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
