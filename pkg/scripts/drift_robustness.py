"""Event-set changes on the calcium scenario when a sinusoidal baseline is added.

    python3 scripts/drift_robustness.py --seeds 8
"""

import argparse

import numpy as np

from havok_detect import run_pipeline
from havok_detect.cli import scenario_config
from havok_detect.synth import gen_calcium, match_events


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=8)
    p.add_argument("--amplitude", type=float, default=1.0)
    a = p.parse_args()
    fracs = (0.25, 0.5, 1.0, 2.0)
    print("seed," + ",".join(f"period_{f}N" for f in fracs))
    for s in range(a.seeds):
        y, _ = gen_calcium(seed=s)
        cfg = scenario_config("calcium", y.sample_period)
        base = run_pipeline(y, cfg)
        n, t = len(y), np.arange(len(y))
        row = []
        for f in fracs:
            q = run_pipeline(y.with_samples(y.samples + a.amplitude * np.sin(2 * np.pi * t / (f * n) + 0.3)),
                             cfg).peak_indices
            row.append(len(base.peak_indices) + len(q) - 2 * match_events(q, base.peak_indices,
                                                                          base.sector_halfwidth))
        print(f"{s}," + ",".join(str(c) for c in row))


if __name__ == "__main__":
    main()
