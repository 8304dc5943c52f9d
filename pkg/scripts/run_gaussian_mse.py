"""Mean squared error of posterior moment estimates against epochs.

Gaussian mean model with a conjugate prior, n in {100, 10^4}, 50 replicates.
Prints the per-checkpoint MSE of the second moment and the drop over the
last decade of epochs for each method.
"""

import argparse
from pathlib import Path

from zigzag import experiments as ex
from zigzag.cli import run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/gaussian-mse")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    cfg = ex.make_config(["experiment=gaussian-mse"], args.set)
    doc = run(cfg, Path(args.out), args.workers)
    for key, row in doc["summary"].items():
        mse = " ".join(f"{v:.2e}" for v in row["mse_m2"])
        print(f"{key:18s} z(m1)={row['final_m1_z']:+.2f} z(m2)={row['final_m2_z']:+.2f} "
              f"drop={row['last_decade_m2_ratio']:.2f}  mse_m2: {mse}")


if __name__ == "__main__":
    main()
