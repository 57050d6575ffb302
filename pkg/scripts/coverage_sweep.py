"""Monte Carlo miscoverage of conformal prediction over a grid of significance levels.

    python3 scripts/coverage_sweep.py --n 20 --q 0.3 0.7 --trials 20000
"""

import argparse
import csv
import sys

from conflab.conformal import make_score
from conflab.gaps import mc_coverage
from conflab.space import Distribution, ObservationSpace


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--space", default="1x2")
    ap.add_argument("--score", choices=["binary", "knn"], default="knn")
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--q", type=float, nargs="+", default=[0.3, 0.7], help="distribution on Z")
    ap.add_argument("--epsilons", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.3, 0.5])
    ap.add_argument("--trials", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="-")
    args = ap.parse_args(argv)

    A = make_score(args.score, ObservationSpace.parse(args.space))
    Q = Distribution.from_array(args.q)
    rows = []
    for eps in args.epsilons:
        for smoothed in (True, False):
            r = mc_coverage(A, Q, args.n, eps, args.trials, seed=args.seed, smoothed=smoothed)
            rows.append((eps, smoothed, r.trials, r.errors, r.miscoverage, r.sigma, r.ok))

    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh)
    w.writerow(["epsilon", "smoothed", "trials", "errors", "miscoverage", "sigma", "ok"])
    w.writerows(rows)
    if fh is not sys.stdout:
        fh.close()
    return 0 if all(r[-1] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
