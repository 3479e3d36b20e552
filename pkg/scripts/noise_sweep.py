"""Mean error ratio against noise level (plot-ready CSV on stdout).

    python3 scripts/noise_sweep.py --trials 20 --jobs 4
"""

import argparse
import csv
import sys

from scipy.stats import spearmanr

from havok_detect.cli import bench


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--levels", default="0.05,0.1,0.2,0.3,0.4")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    a = p.parse_args()
    levels = [float(v) for v in a.levels.split(",")]
    rows = bench("calcium", ("noise", levels), a.trials, a.jobs)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    rho = spearmanr(levels, [r["mean"] for r in rows])[0]
    print(f"# Spearman(noise, mean ER) = {rho:.3f}")


if __name__ == "__main__":
    main()
