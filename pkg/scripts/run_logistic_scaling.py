"""ESS per epoch against the number of observations for 2-d logistic regression.

Sweeps n = 2^8 .. 2^14 with 10 seeds per cell and prints the mean ESS per
epoch of each method together with its log-log slope in n.
"""

import argparse
from pathlib import Path

from zigzag import experiments as ex
from zigzag.cli import run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/logistic-scaling")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    cfg = ex.make_config(["experiment=logistic-scaling"], args.set)
    doc = run(cfg, Path(args.out), args.workers)
    ns = [int(n) for n in cfg.ns]
    print("method      " + " ".join(f"{n:>9d}" for n in ns) + "    slope")
    for method, row in doc["summary"].items():
        vals = dict(zip(row["n"], row["mean_esspe"]))
        cells = " ".join(f"{vals[n]:9.3g}" if n in vals else " " * 9 for n in ns)
        print(f"{method:11s} {cells}  {row.get('slope', float('nan')):+.3f}")


if __name__ == "__main__":
    main()
