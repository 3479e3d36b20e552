"""Mud-pulse bit error rate with and without the matched filter, plus a drift sweep.

    python3 scripts/mud_ablation.py --seeds 20
"""

import argparse

import numpy as np

from havok_detect.cli import bench, run_trial


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--drifts", default="0,0.5,1,2")
    p.add_argument("--jobs", type=int, default=1)
    a = p.parse_args()
    for mf in (True, False):
        ber = np.array([run_trial("mud", s, matched_filter=mf)["bit_error_rate"] for s in range(a.seeds)])
        print(f"matched_filter={mf}: mean BER {ber.mean():.4f} (std {ber.std(ddof=1):.4f})")
    print("param,value,metric,mean,std,trials")
    for r in bench("mud", ("drift", [float(v) for v in a.drifts.split(",")]), a.seeds, a.jobs):
        print(f"{r['param']},{r['value']},{r['metric']},{r['mean']:.4f},{r['std']:.4f},{r['trials']}")


if __name__ == "__main__":
    main()
