"""Random-instance campaign: generate members of every class and re-verify them.

Each row is one (class, space, n) cell with the number of instances that
passed their oracle and the worst oracle value seen.

    python3 scripts/run_campaign.py --instances 50 --out campaign.csv
"""

import argparse
import csv
import sys
import time

from conflab.instances import instance_rng, random_instance
from conflab.oracles import ClassLabel, check_class
from conflab.space import ObservationSpace


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--spaces", nargs="+", default=["1x2", "1x3", "2x2"])
    ap.add_argument("--n", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="-")
    args = ap.parse_args(argv)

    rows = []
    for c, label in enumerate(ClassLabel):
        for space_text in args.spaces:
            space = ObservationSpace.parse(space_text)
            for n in args.n:
                start = time.perf_counter()
                passed, worst = 0, 0.0
                for i in range(args.instances):
                    table = random_instance(label, space, n, instance_rng(args.seed + 1000 * c, i))
                    rep = check_class(table, label)
                    passed += rep.ok
                    worst = max(worst, rep.worst_value)
                rows.append((label.value, space_text, n, args.instances, passed, worst,
                             round(time.perf_counter() - start, 3)))

    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh)
    w.writerow(["class", "space", "n", "instances", "passed", "worst_value", "seconds"])
    w.writerows(rows)
    if fh is not sys.stdout:
        fh.close()
    return 0 if all(r[3] == r[4] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
