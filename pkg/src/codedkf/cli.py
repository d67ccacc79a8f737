"""Command-line interface: check, design, simulate, control, capacity, conjecture.

Exit codes: 0 success/feasible, 2 infeasible or not stabilizable, 1 any error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from .coded_kf import EncoderDesign, build_partition_encoder, transmit_power
from .conjecture import SearchConfig, run_conjecture_sweep
from .errors import CodedKFError, ConstructionFailed, InfeasiblePartition, NotStabilizable
from .lqr import solve_control_dare, verify_separation
from .models import validate_assumptions
from .scenario_io import (ScenarioFileError, atomic_write, digest_bytes, dumps, envelope,
                          load_scenario)
from .simulation import (SimulationConfig, compare_to_theory, run_estimation_sim,
                         steady_state, trace_csv_text)
from .stability import (is_matched, linear_capacity, min_linear_power, min_power_for_set,
                        shannon_capacity, suboptimality_gap, water_fill)

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class Infeasible(Exception):
    def __init__(self, payload, digest):
        self.payload = payload
        self.digest = digest


def _emit(args, command, digest, payload, out_required=False):
    env = envelope(command, digest, payload)
    text = dumps(env) + "\n"
    if getattr(args, "out", None):
        atomic_write(args.out, text, force=args.force)
    elif out_required:
        raise ScenarioFileError("--out is required")
    sys.stdout.write(text)
    return env


def allocate(scen, report, slack):
    """Per-channel power for the best partition: set minimum + slack, the rest water-filled."""
    h = scen.channel.gains
    lam = scen.source.moduli
    sets = report.best_partition.sets
    used = [i for i, S in enumerate(sets) if S]
    floors = np.array([min_power_for_set(sets[i], h[i], lam) + slack for i in used])
    if floors.sum() >= scen.p:
        return None
    pi = np.zeros(len(h))
    pi[used] = water_fill(h[used], scen.p, floors)
    return pi


def _design(ld, slack):
    scen = ld.scenario
    rep = min_linear_power(scen)
    pi = allocate(scen, rep, slack) if rep.feasible else None
    if pi is None:
        raise Infeasible({"feasible": False, "min_power": rep.min_power, "p": scen.p,
                          "slack": slack, "margin": rep.margin}, ld.digest)
    design, P = build_partition_encoder(rep.best_partition, pi, scen.source, scen.channel, ld.solver)
    return rep, design, P


def cmd_check(args):
    ld = load_scenario(args.scenario)
    rep = min_linear_power(ld.scenario)
    payload = {**rep.to_dict(), "p": ld.p, "violations": validate_assumptions(ld.scenario),
               "eigenvalues": ld.scenario.source.eigenvalues, "gains": ld.scenario.channel.gains,
               "notes": ld.notes}
    _emit(args, "check", ld.digest, payload)
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def cmd_design(args):
    ld = load_scenario(args.scenario)
    rep, design, P = _design(ld, args.slack)
    payload = {
        "design": design.to_dict(),
        "Gamma_tilde": design.gamma_tilde(P),
        "P": P,
        "predicted_mse": float(np.trace(P)),
        "predicted_power": transmit_power(design, P),
        "min_power": rep.min_power,
        "p": ld.p,
        "slack": args.slack,
        "transform": ld.transform,
    }
    _emit(args, "design", ld.digest, payload, out_required=True)
    return EXIT_OK


def _load_design(path):
    with open(path) as fh:
        doc = json.load(fh)
    if "payload" in doc:
        doc = doc["payload"]
    if "design" in doc:
        doc = doc["design"]
    return EncoderDesign.from_dict(doc)


def _sim_cfg(ld, args):
    s = ld.sim
    T = args.horizon if args.horizon is not None else s.horizon
    burn = s.burn_in if args.horizon is None else None
    return SimulationConfig(T, burn, args.trials if args.trials is not None else s.trials,
                            args.seed if args.seed is not None else s.seed)


def cmd_simulate(args):
    ld = load_scenario(args.scenario)
    design = _load_design(args.design)
    design.check_dims(ld.scenario.source, ld.scenario.channel)
    cfg = _sim_cfg(ld, args)
    P = steady_state(ld.scenario, design, ld.solver)
    out = run_estimation_sim(ld.scenario, design, cfg, P_star=P, keep_trace=bool(args.trace))
    summ, rows = out if args.trace else (out, None)
    payload = {**summ.to_dict(), "horizon": cfg.horizon, "burn_in": cfg.burn_in,
               "trials": cfg.trials, "seed": cfg.seed,
               "theory_mse": None if P is None else float(np.trace(P)),
               "theory_power": None if P is None else transmit_power(design, P)}
    if P is not None:
        payload["mse_rel_dev"], payload["power_rel_dev"] = compare_to_theory(summ, P, design)
    if args.trace:
        atomic_write(args.trace, trace_csv_text(rows, ld.scenario.source.k), force=args.force)
    _emit(args, "simulate", ld.digest, payload)
    return EXIT_OK


def cmd_control(args):
    ld = load_scenario(args.scenario)
    if ld.control is None:
        raise ScenarioFileError("scenario has no 'control' block")
    lqr = solve_control_dare(ld.control)
    rep, design, P = _design(ld, args.slack)
    cfg = _sim_cfg(ld, args)
    sep = verify_separation(ld.control, ld.scenario.channel, design, lqr, cfg, P)
    payload = {"trace_QF": lqr.full_info_cost, "trace_P": float(np.trace(P)),
               "predicted_lqr": sep.rhs, "predicted_lqr_gain_weighted": sep.rhs_weighted,
               "empirical_lqr": sep.lhs, "rel_dev": sep.rel_dev,
               "rel_dev_gain_weighted": sep.rel_dev_weighted,
               "estimation_mse_in_loop": sep.estimation_mse_in_loop, "diverged": sep.diverged,
               "F": lqr.F, "K": lqr.K, "horizon": cfg.horizon, "trials": cfg.trials, "seed": cfg.seed}
    _emit(args, "control", ld.digest, payload)
    return EXIT_OK


def cmd_capacity(args):
    ld = load_scenario(args.scenario, need_scenario=False)
    gains = ld.channel.gains
    C, alloc = shannon_capacity(gains, ld.p)
    payload = {"p": ld.p, "shannon_capacity_nats": C, "allocation": alloc}
    if ld.scenario is not None:
        payload["linear_capacity_nats"] = linear_capacity(ld.scenario)
        payload["matched"] = is_matched(ld.scenario)
    if ld.raw_A.shape[0] == 1:
        lin, _, ratio = suboptimality_gap(1.0, gains, ld.p)
        payload.update(best_subchannel_capacity_nats=lin, suboptimality_ratio=ratio)
    _emit(args, "capacity", ld.digest, payload)
    return EXIT_OK


def cmd_conjecture(args):
    dims = []
    for tok in args.dims.split(","):
        try:
            n, k = (int(v) for v in tok.lower().split("x"))
        except ValueError:
            raise ScenarioFileError(f"--dims: cannot parse '{tok}', expected like 2x3") from None
        if n < 1 or k < 1 or n**k > 10**7:
            raise ScenarioFileError(f"--dims: {tok} is outside the enumeration budget")
        dims.append((n, k))
    cfg = SearchConfig(restarts=args.restarts)
    t0 = time.time()
    rep = run_conjecture_sweep(dims, args.count, args.seed, cfg=cfg)
    rep["elapsed_seconds"] = round(time.time() - t0, 3)
    params = json.dumps({"dims": dims, "count": args.count, "seed": args.seed,
                       "restarts": args.restarts}, sort_keys=True).encode()
    _emit(args, "conjecture", digest_bytes(params), rep)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="codedkf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True, metavar="PATH")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--force", action="store_true", help="overwrite existing output files")

    def simflags(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--horizon", type=int)

    p = sub.add_parser("check", help="feasibility of linear codes for a scenario")
    common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("design", help="build a partition encoder and write it to --out")
    common(p)
    p.add_argument("--slack", type=float, default=1e-6, help="power added to each set minimum")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="Monte Carlo run of a design")
    common(p)
    p.add_argument("--design", required=True, metavar="PATH")
    p.add_argument("--trace", metavar="PATH", help="CSV trace output")
    simflags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("control", help="LQR over the coded channel and the separation check")
    common(p)
    p.add_argument("--slack", type=float, default=1e-6)
    simflags(p)
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("capacity", help="water-filling and linear-code capacities")
    common(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("conjecture", help="sweep random instances of the min-trace problem")
    common(p, scenario=False)
    p.add_argument("--dims", default="2x2,2x3,3x2,3x3", help="comma list of NxK")
    p.add_argument("--count", type=int, default=20, help="instances per dims entry")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=50)
    p.set_defaults(func=cmd_conjecture)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Infeasible as exc:
        sys.stdout.write(dumps(envelope(args.command, exc.digest, exc.payload)) + "\n")
        return EXIT_INFEASIBLE
    except (InfeasiblePartition, ConstructionFailed, NotStabilizable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (CodedKFError, ScenarioFileError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
