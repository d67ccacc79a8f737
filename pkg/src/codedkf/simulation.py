"""Seeded Monte Carlo simulation of the coded filter loop.

The loop is simulated through the prediction error e_t = S_t - Shat_t,
which is what both encoder and decoder act on:

    X_t = G_t e_t + M_t,  Y_t = H X_t + Z_t,  e_{t+1} = A e_t + W_t - K_t Y_t.

S_t itself is only rebuilt when a trace is requested; for an unstable
uncontrolled source it grows without bound.

Random streams: one numpy Generator (Philox bit generator) per
(seed, trial, role) with role W, Z or M, derived through SeedSequence
spawn keys. Gaussian draws use Generator.standard_normal in blocks of
BLOCK steps, then are colored by a symmetric square root of the covariance.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .coded_kf import EncoderDesign, filter_gain, transmit_power
from .errors import InsufficientData
from .linalg import RiccatiStatus, SolverConfig, iterate_riccati, psd_sqrt, symmetrize
from .models import DiagonalChannel, Scenario

ROLES = {"W": 0, "Z": 1, "M": 2}
BLOCK = 4096
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class SimulationConfig:
    horizon: int = 100_000
    burn_in: int | None = None
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.trials < 1:
            raise ValueError("horizon and trials must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        b = self.horizon // 10 if self.burn_in is None else self.burn_in
        if not 0 <= b < self.horizon:
            raise ValueError("burn_in must satisfy 0 <= burn_in < horizon")
        object.__setattr__(self, "burn_in", b)


@dataclass
class SimulationSummary:
    empirical_mse: float
    empirical_power: float
    per_step_mse: np.ndarray
    diverged: bool
    samples: int
    steps_run: int
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "empirical_mse": self.empirical_mse,
            "empirical_power": self.empirical_power,
            "diverged": self.diverged,
            "samples": self.samples,
            "steps_run": self.steps_run,
            **self.extras,
        }


TRACE_COLUMNS_FIXED = ("t", "trial")


def trace_columns(k):
    return (list(TRACE_COLUMNS_FIXED) + [f"s_{j}" for j in range(k)]
            + [f"s_hat_{j}" for j in range(k)] + ["sq_error", "power"])


class NoiseStreams:
    """Per-trial, per-role Gaussian streams read in fixed-size blocks."""

    def __init__(self, seed, trials, dims):
        self.dims = dims
        self.gens = {
            role: [np.random.Generator(np.random.Philox(
                np.random.SeedSequence(seed, spawn_key=(trial, rid))))
                for trial in range(trials)]
            for role, rid in ROLES.items() if dims.get(role, 0) > 0
        }
        self.buf = {}
        self.pos = BLOCK

    def _refill(self):
        self.buf = {role: np.stack([g.standard_normal((BLOCK, self.dims[role])) for g in gens], axis=1)
                    for role, gens in self.gens.items()}
        self.pos = 0

    def next(self):
        """Standard normal draws for one step: dict role -> (trials, dim)."""
        if self.pos >= BLOCK:
            self._refill()
        out = {role: b[self.pos] for role, b in self.buf.items()}
        self.pos += 1
        return out


def steady_state(scenario: Scenario, design: EncoderDesign, cfg: SolverConfig | None = None):
    out = iterate_riccati(scenario.source, scenario.channel, design, cfg)
    return out.P if out.status is RiccatiStatus.CONVERGED else None


class _GainSchedule:
    """K_t, G_t along the deterministic covariance recursion, frozen once it settles."""

    def __init__(self, source, channel, design):
        self.source, self.channel, self.design = source, channel, design
        self.P = source.Q.copy()
        self.frozen = False
        self._update()

    def _update(self):
        self.K, _, self.S = filter_gain(self.P, self.design, self.source, self.channel)
        self.G = self.design.encoder_gain(self.P)

    def advance(self):
        if self.frozen:
            return
        A, Q = self.source.A, self.source.Q
        Pn = symmetrize(A @ self.P @ A.T + Q - self.K @ self.S @ self.K.T)
        if np.max(np.abs(Pn - self.P)) <= 1e-15 * max(1.0, np.max(np.abs(Pn))):
            self.frozen = True
        self.P = Pn
        self._update()


def run_estimation_sim(scenario: Scenario, design: EncoderDesign, cfg: SimulationConfig,
                       P_star=None, keep_trace=False, control=None):
    """Closed-loop estimation (or control, see lqr.run_control_sim) simulation.

    Returns a SimulationSummary, and the trace rows as a second value when
    keep_trace is set. `control` is an internal hook (B, K_lqr, C_cost, E_cost).
    """
    src, ch = scenario.source, scenario.channel
    design.check_dims(src, ch)
    k, n = src.k, ch.n
    A, H = src.A, np.diag(ch.gains)
    if P_star is None:
        P_star = steady_state(scenario, design)
    bound = (DIVERGENCE_FACTOR * np.trace(P_star) if P_star is not None
             else 1e12 * np.trace(src.Q))
    Wc, Mc = psd_sqrt(src.Q), psd_sqrt(design.Omega)
    dither = bool(np.any(design.Omega != 0))
    streams = NoiseStreams(cfg.seed, cfg.trials, {"W": k, "Z": n, "M": n if dither else 0})
    sched = _GainSchedule(src, ch, design)
    R = cfg.trials

    e = streams.next()["W"] @ Wc.T          # e_0 ~ N(0, P_0) with P_0 = Q
    track_state = keep_trace or control is not None
    S = e.copy() if track_state else None
    if control is not None:
        Bc, Kc, Cc, Ec = control
        cost_sum, state_sum = [], []
        state_bound = 1e12 * np.trace(src.Q)
    mse = np.zeros(cfg.horizon)
    pw = np.zeros(cfg.horizon)
    rows = [] if keep_trace else None
    diverged = False
    steps = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(cfg.horizon):
            d = streams.next()
            G, K = sched.G, sched.K
            x = e @ G.T
            if dither:
                x = x + d["M"] @ Mc.T
            y = x @ H.T + d["Z"]
            err2 = np.einsum("ij,ij->i", e, e)
            pwr = np.einsum("ij,ij->i", x, x)
            mse[t] = math.fsum(err2) / R
            pw[t] = math.fsum(pwr) / R
            if keep_trace:
                s_hat = S - e
                for r in range(R):
                    rows.append([t, r, *S[r], *s_hat[r], err2[r], pwr[r]])
            w = d["W"] @ Wc.T
            if control is not None:
                s_hat = S - e
                u = -(s_hat @ Kc.T)
                cost_sum.append(math.fsum(np.einsum("ij,jk,ik->i", S, Cc, S)
                                          + np.einsum("ij,jk,ik->i", u, Ec, u)) / R)
                state_sum.append(math.fsum(np.einsum("ij,ij->i", S, S)) / R)
                S = S @ A.T + u @ Bc.T + w
            elif track_state:
                S = S @ A.T + w
            e = e @ A.T + w - y @ K.T
            sched.advance()
            steps = t + 1
            if not np.isfinite(mse[t]) or mse[t] > bound or (
                    control is not None and not state_sum[-1] <= state_bound):
                diverged = True
                break
    b = cfg.burn_in
    window = slice(b, steps)
    samples = max(0, steps - b) * R
    if diverged or samples == 0:
        emse = math.inf if diverged else math.nan
        epow = math.inf if diverged else math.nan
    else:
        emse = math.fsum(mse[window]) / (steps - b)
        epow = math.fsum(pw[window]) / (steps - b)
    summary = SimulationSummary(emse, epow, mse[:steps], diverged, samples, steps)
    if control is not None:
        if diverged or samples == 0:
            summary.extras.update(lqr_cost=math.inf if diverged else math.nan,
                                  state_power=math.inf if diverged else math.nan)
        else:
            summary.extras.update(lqr_cost=math.fsum(cost_sum[b:steps]) / (steps - b),
                                  state_power=math.fsum(state_sum[b:steps]) / (steps - b))
    if keep_trace:
        return summary, rows
    return summary


def compare_to_theory(summary: SimulationSummary, P_star, design: EncoderDesign):
    """Relative deviations of empirical MSE and power from tr(P*) and the predicted power."""
    if summary.diverged:
        return math.inf, math.inf
    if summary.samples == 0:
        raise InsufficientData("no samples after burn-in")
    mse_th = float(np.trace(P_star))
    pow_th = transmit_power(design, P_star)
    return (abs(summary.empirical_mse - mse_th) / mse_th,
            abs(summary.empirical_power - pow_th) / pow_th if pow_th > 0 else math.inf)


def trace_csv_text(rows, k) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_columns(k))
    for r in rows:
        w.writerow([r[0], r[1]] + [repr(float(v)) for v in r[2:]])
    return buf.getvalue()


def write_trace_csv(path, rows, k):
    with open(path, "w", newline="") as fh:
        fh.write(trace_csv_text(rows, k))
