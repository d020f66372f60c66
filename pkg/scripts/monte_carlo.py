#!/usr/bin/env python3
"""Reproduce the Monte Carlo experiment sweeps.

Runs the four standard axes (swarm size, multi-visit share, sensor radius,
target distribution) with the same seed-stream scheme as `gridswarm sweep`
and writes one output directory per axis.
"""

import argparse
from pathlib import Path

from gridswarm import cli


AXES = {
    "robots": [3, 6, 9],
    "mrt_percent": [0, 20, 40, 60],
    "sensor_radius": [15, 20, 25],
    "distribution": ["uniform", "clustered"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--policy-conflict", default="policies/conflict.qnet")
    ap.add_argument("--policy-free", default="policies/free.qnet")
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repetitions", type=int, default=30)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    for axis, values in AXES.items():
        cfg = cli.load_config(None)
        cfg["sweep"] = {"axis": axis, "values": values,
                        "repetitions": args.repetitions}
        out = Path(args.out) / axis
        print(f"== sweep over {axis}: {values} ==")
        result = cli.run_sweep(cfg, args.seed, args.policy_conflict,
                               args.policy_free, out, jobs=args.jobs)
        for row in result["summary"]:
            print(f"  {axis}={row['axis_value']}: time "
                  f"{row['mean_time']:.1f} +- {row['std_time']:.1f} s, "
                  f"success {row['success_rate']:.2%}")


if __name__ == "__main__":
    main()
