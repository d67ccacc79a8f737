#!/usr/bin/env python3
"""LQR cost over the coded channel against two predictions, for several input weights."""

import argparse

from codedkf.coded_kf import EncoderDesign
from codedkf.lqr import ControlSystem, solve_control_dare, verify_separation
from codedkf.models import DiagonalChannel
from codedkf.simulation import SimulationConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--a", type=float, default=2.0)
    ap.add_argument("--pi", type=float, default=5.0)
    ap.add_argument("--e", type=float, nargs="+", default=[0.0, 0.1, 1.0, 10.0])
    ap.add_argument("--horizon", type=int, default=200_000)
    ap.add_argument("--trials", type=int, default=2)
    args = ap.parse_args()

    design = EncoderDesign([[1.0]], None, [args.pi])
    ch = DiagonalChannel([1.0])
    cfg = SimulationConfig(args.horizon, trials=args.trials, seed=1)
    print(f"{'E':>6} {'K':>8} {'empirical':>10} {'tr(QF)+trP':>11} {'dev':>7} {'weighted':>9} {'dev':>7}")
    for e in args.e:
        sysm = ControlSystem([[args.a]], [[1.0]], [[1.0]], [[1.0]], [[e]], allow_singular_E=(e == 0))
        lq = solve_control_dare(sysm)
        r = verify_separation(sysm, ch, design, lq, cfg)
        print(f"{e:6.2f} {lq.K[0, 0]:8.4f} {r.lhs:10.4f} {r.rhs:11.4f} {r.rel_dev:7.3f} "
              f"{r.rhs_weighted:9.4f} {r.rel_dev_weighted:7.4f}")


if __name__ == "__main__":
    main()
