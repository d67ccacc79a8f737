#!/usr/bin/env python3
"""Scan the power budget across the stability threshold of a scalar channel."""

import argparse

import numpy as np

from codedkf.coded_kf import EncoderDesign
from codedkf.linalg import SolverConfig, iterate_riccati
from codedkf.models import DiagonalChannel, SourceModel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lam", type=float, nargs="+", default=[2.0, -1.5])
    ap.add_argument("--h", type=float, default=1.0)
    ap.add_argument("--factors", type=float, nargs="+",
                    default=[0.8, 0.95, 0.99, 1.001, 1.01, 1.05, 1.2, 2.0, 5.0])
    args = ap.parse_args()

    lam = np.asarray(args.lam)
    src = SourceModel(np.diag(lam), np.eye(len(lam)))
    ch = DiagonalChannel([args.h])
    p_min = (np.prod(lam) ** 2 - 1) / args.h**2
    print(f"threshold power {p_min:.6g}")
    print(f"{'p/p_min':>8} {'status':>14} {'iters':>7} {'tr P':>12}")
    for f in args.factors:
        design = EncoderDesign(np.ones((1, len(lam))), None, [f * p_min])
        out = iterate_riccati(src, ch, design, SolverConfig(max_iterations=200_000))
        trP = np.trace(out.P) if out.converged else float("nan")
        print(f"{f:8.3f} {out.status.value:>14} {out.iterations:7d} {trP:12.6g}")


if __name__ == "__main__":
    main()
