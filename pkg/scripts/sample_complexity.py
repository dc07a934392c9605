"""Print sample-size tables: reach m against p and N, and the m*k trade-off of the confidence split."""

import argparse
import csv
import sys

import numpy as np

from pacreach.planner import auto_split, control_sample_size, reach_sample_size


def reach_table(Ns, ps, delta_R):
    for N in Ns:
        for p in ps:
            yield {"N": N, "p": p, "delta_R": delta_R, "m": reach_sample_size(N, p, delta_R)}


def split_table(delta, p, alpha, epsilon, N, points):
    best = auto_split(delta, p, alpha, epsilon, N)
    for frac in np.linspace(0.05, 0.95, points):
        delta_C = delta * frac
        k = control_sample_size(alpha, epsilon, delta_C)
        # largest delta_R that still meets the overall confidence with this k
        delta_R = 1 - ((1 - delta) / (1 - delta_C)) ** (1 / k)
        m = reach_sample_size(N, p, delta_R)
        yield {"delta_C": delta_C, "delta_R": delta_R, "k": k, "m": m, "n": m * k, "auto": 0}
    yield {"delta_C": best.delta_C, "delta_R": best.delta_R, "k": best.k, "m": best.reach.m, "n": best.k * best.reach.m, "auto": 1}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--table", choices=["reach", "split"], default="reach")
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--epsilon", type=float, default=0.05)
    ap.add_argument("--p", type=float, default=0.05)
    ap.add_argument("--N", type=int, default=10)
    ap.add_argument("--points", type=int, default=10)
    args = ap.parse_args(argv)
    if args.table == "reach":
        rows = list(reach_table([2, 5, 10, 20, 50, 100], [0.1, 0.05, 0.01, 0.001], args.delta))
    else:
        rows = list(split_table(args.delta, args.p, args.alpha, args.epsilon, args.N, args.points))
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


if __name__ == "__main__":
    main()
