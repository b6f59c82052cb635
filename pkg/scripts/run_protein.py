"""Mouse protein experiment: MIO against the baselines on held-out mice.

    python scripts/run_protein.py Data_Cortex_Nuclear.csv --out protein_out
"""

import argparse
import json
import os

from clustermio import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data", help="UCI mouse protein expression CSV export")
    ap.add_argument("--proteins", default=None, help="comma-separated outcomes (default: the bundled list)")
    ap.add_argument("--split", choices=("clusters", "rows"), default="clusters")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="protein_out")
    args = ap.parse_args()
    cfg = {"kind": "protein", "data_path": args.data, "split": args.split, "seed": args.seed}
    if args.proteins:
        cfg["proteins"] = args.proteins.split(",")
    bench.run_bench(bench.campaign_from_dict(cfg), args.out, jobs=args.jobs)
    with open(os.path.join(args.out, "protein_summary.json")) as fh:
        print(json.dumps(json.load(fh), indent=2))


if __name__ == "__main__":
    main()
