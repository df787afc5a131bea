#!/usr/bin/env python3
"""Sweep the number of malicious nodes and emit plot-ready tables.

Runs the central and random placement scenarios for each m, collecting the
share of compromised paths and per-estimator precision/recall/F1, one CSV
row per (scenario, m, amount, estimator, target).

Example:
    python scripts/sweep_adversary_size.py --synthetic scale-free:200 \
        --m 1 2 4 8 16 --seeds 10 --payments 500 --out results/sweep
"""

import argparse
import csv
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pcnsim.graph import load_snapshot
from pcnsim.harness import ScenarioConfig, generate_synthetic_graph, run_experiment


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--snapshot")
    src.add_argument("--synthetic", help="kind:n, e.g. scale-free:200")
    p.add_argument("--m", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--scenarios", nargs="+", default=["central", "random"])
    p.add_argument("--amounts", type=int, nargs="+", default=[1000])
    p.add_argument("--payments", type=int, default=500)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--out", required=True)
    return p.parse_args()


def main():
    args = parse_args()
    if args.snapshot:
        with open(args.snapshot) as fh:
            graph = load_snapshot(json.load(fh))
    else:
        kind, _, n = args.synthetic.partition(":")
        graph = generate_synthetic_graph(kind, int(n))
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for scenario in args.scenarios:
        for m in args.m:
            cfg = ScenarioConfig(
                scenario=scenario,
                m=m,
                amounts_sat=tuple(args.amounts),
                payments_per_run=args.payments,
                repetitions=args.seeds,
                base_seed=args.base_seed,
                probes_per_path=args.probes,
                max_estimates_per_channel=2,
            )
            result = run_experiment(graph, cfg)
            for agg in result.aggregate:
                rows.append(agg)
                print(
                    f"{scenario} m={m} amount={agg['amount_sat']} "
                    f"{agg['estimator']}/{agg['target']}: F1={agg['f1_mean']:.3f} "
                    f"compromised={agg['compromised_mean']:.3f}"
                )
            for failure in result.failures:
                print(f"FAILED: {failure}", file=sys.stderr)
    out_file = os.path.join(args.out, "sweep.csv")
    with open(out_file, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {out_file} ({len(rows)} rows)")


if __name__ == "__main__":
    main()
