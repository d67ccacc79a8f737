#!/usr/bin/env python3
"""Sweep random min-trace instances and report how often the optimum is a partition."""

import argparse
import json
import sys
import time

from codedkf.conjecture import SearchConfig, run_conjecture_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", default="2x2,2x3,3x2,3x3")
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--restarts", type=int, default=50)
    ap.add_argument("--out", help="write the full JSON report here")
    args = ap.parse_args()

    dims = [tuple(int(v) for v in tok.split("x")) for tok in args.dims.split(",")]

    def progress(rec):
        tag = "ok " if rec["passes"] else ("CEX" if rec["below_oracle_by_more_than_gap"] else "mix")
        print(f"{tag} n={rec['n']} k={rec['k']} #{rec['index']:2d} trace={rec['trace']:.6g} "
              f"oracle={rec['oracle_trace']:.6g} nnz={rec['column_nnz']}", file=sys.stderr)

    t0 = time.time()
    rep = run_conjecture_sweep(dims, args.count, args.seed, cfg=SearchConfig(restarts=args.restarts),
                               progress=progress)
    rep["elapsed_seconds"] = round(time.time() - t0, 1)
    print(f"{'dims':>5} {'pass':>6} {'struct':>7} {'med ratio':>10} {'min ratio':>10} {'cex':>4}")
    for r in rep["table"]:
        print(f"{r['n']}x{r['k']:<3} {r['pass_fraction']:6.2f} {r['structured_fraction']:7.2f} "
              f"{r['median_ratio']:10.4f} {r['min_ratio']:10.4f} {r['candidate_counterexamples']:4d}")
    print(f"overall pass fraction {rep['overall']['pass_fraction']}, {rep['elapsed_seconds']}s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rep, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
