"""Run the 66-scenario simulation grid and write metrics, tables and plots.

    python scripts/run_grid.py --replicates 20 --jobs 4 --out grid_out
"""

import argparse
import json

from clustermio import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--presets", default="Low,Medium,High", help="comma-separated subset of presets")
    ap.add_argument("--sigma-eps", type=float, default=1.0)
    ap.add_argument("--out", default="grid_out")
    args = ap.parse_args()
    campaign = bench.campaign_from_dict({
        "kind": "simulation", "grid": "grid66", "replicates": args.replicates, "seed": args.seed,
        "presets": args.presets.split(","), "overrides": {"sigma_eps": args.sigma_eps},
    })
    manifest = bench.run_bench(campaign, args.out, jobs=args.jobs)
    print(json.dumps({"tasks": manifest.n_tasks, "failures": len(manifest.failures),
                      "non_optimal": manifest.non_optimal, "out": args.out}))


if __name__ == "__main__":
    main()
