"""Feasibility of linear innovation codes: partitions, closed forms, capacities.

All logarithms are natural; capacities are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import BudgetExceeded, PartitionError, ShapeError
from .models import DiagonalChannel, Scenario

ENUM_BUDGET = 10**7
MATCH_TOL = 1e-6


@dataclass(frozen=True)
class Partition:
    """n index sets over modes 0..k-1; set i is carried by sub-channel i."""

    sets: tuple

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(tuple(sorted(int(j) for j in s)) for s in self.sets))

    @classmethod
    def from_assignment(cls, assign, n):
        sets = [[] for _ in range(n)]
        for j, i in enumerate(assign):
            sets[int(i)].append(j)
        return cls(tuple(sets))

    def assignment(self, k) -> np.ndarray:
        a = np.full(k, -1)
        for i, s in enumerate(self.sets):
            a[list(s)] = i
        return a

    def validate(self, k, n=None):
        if n is not None and len(self.sets) != n:
            raise PartitionError(f"expected {n} sets, got {len(self.sets)}")
        seen = [j for s in self.sets for j in s]
        if len(seen) != len(set(seen)):
            raise PartitionError("sets overlap")
        if sorted(seen) != list(range(k)):
            raise PartitionError(f"sets do not cover modes 0..{k - 1}")
        return self

    def indicator(self, k) -> np.ndarray:
        """n x k 0/1 matrix with row i marking the modes in set i."""
        G = np.zeros((len(self.sets), k))
        for i, s in enumerate(self.sets):
            G[i, list(s)] = 1.0
        return G

    def to_list(self):
        return [list(s) for s in self.sets]


@dataclass(frozen=True)
class StabilityReport:
    feasible: bool
    best_partition: Partition
    min_power: float
    set_powers: tuple
    shannon_capacity_at_p: float
    linear_capacity_at_p: float
    matched: bool
    margin: float
    log_det: float

    def to_dict(self):
        return {
            "feasible": self.feasible,
            "best_partition": self.best_partition.to_list(),
            "min_power": self.min_power,
            "set_powers": list(self.set_powers),
            "margin": self.margin,
            "shannon_capacity_nats": self.shannon_capacity_at_p,
            "linear_capacity_nats": self.linear_capacity_at_p,
            "sum_log_eigenvalues_nats": self.log_det,
            "matched": self.matched,
        }


def _gains(channel):
    if isinstance(channel, DiagonalChannel):
        return channel.gains
    return np.atleast_1d(np.asarray(channel, dtype=float))


def min_power_for_set(S, h, lambdas) -> float:
    """Smallest power making sub-channel h carry the modes S: (prod |lambda|^2 - 1) / h^2."""
    S = list(S)
    if not S:
        return 0.0
    if h <= 0:
        return math.inf
    lam = np.abs(np.asarray(lambdas, dtype=float))[S]
    return math.expm1(2.0 * float(np.sum(np.log(lam)))) / h**2


def sub_capacity(h, p) -> float:
    return 0.5 * math.log1p(h * h * p)


def check_partition(partition: Partition, pi, scenario: Scenario) -> bool:
    """Strict per-set rate condition plus total power sum(pi) <= p."""
    lam = scenario.source.moduli
    h = scenario.channel.gains
    partition.validate(len(lam), len(h))
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (len(h),):
        raise ShapeError(f"pi must have length {len(h)}")
    if np.any(pi < 0) or pi.sum() > scenario.p:
        return False
    for i, S in enumerate(partition.sets):
        if S and not float(np.sum(np.log(lam[list(S)]))) < sub_capacity(h[i], pi[i]):
            return False
    return True


def enumerate_assignment_costs(lambdas, gains, budget=ENUM_BUDGET, chunk=1 << 16):
    """Yield (first_index, costs) for all n^k assignments in lexicographic order.

    Mode 0 is the most significant digit; cost is the sum of per-set minimum powers.
    """
    loglam2 = 2.0 * np.log(np.abs(np.asarray(lambdas, dtype=float)))
    h = np.asarray(gains, dtype=float)
    k, n = len(loglam2), len(h)
    total = n**k
    if total > budget:
        raise BudgetExceeded(f"{n}^{k} = {total} assignments exceed budget {budget}")
    weights = n ** np.arange(k - 1, -1, -1)
    with np.errstate(divide="ignore"):
        inv_h2 = np.where(h > 0, 1.0 / np.where(h > 0, h, 1.0) ** 2, np.inf)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        digits = (idx[:, None] // weights) % n
        cost = np.zeros(len(idx))
        for i in range(n):
            mask = digits == i
            used = mask.any(axis=1)
            term = np.expm1(mask @ loglam2)
            with np.errstate(invalid="ignore"):
                cost += np.where(used, term * inv_h2[i], 0.0)
        yield start, digits, cost


def best_assignment(lambdas, gains, budget=ENUM_BUDGET):
    """(min_power, assignment) minimizing total power; ties go to the lexicographically first."""
    best, arg = math.inf, None
    for _, digits, cost in enumerate_assignment_costs(lambdas, gains, budget):
        j = int(np.argmin(cost))
        if cost[j] < best or arg is None:
            best, arg = float(cost[j]), digits[j].copy()
    return best, arg


def ranked_assignments(lambdas, gains, limit, budget=ENUM_BUDGET):
    """The `limit` cheapest assignments as a list of (cost, assignment), cheapest first."""
    keep_c, keep_a = [], []
    for _, digits, cost in enumerate_assignment_costs(lambdas, gains, budget):
        keep_c.append(cost)
        keep_a.append(digits)
        c, a = np.concatenate(keep_c), np.concatenate(keep_a)
        o = np.argsort(c, kind="stable")[:limit]
        keep_c, keep_a = [c[o]], [a[o]]
    c, a = keep_c[0], keep_a[0]
    return [(float(ci), ai) for ci, ai in zip(c, a)]


def water_fill(gains, p, floors=None):
    """Maximize sum 0.5 log(1 + h_i^2 p_i) s.t. sum p_i = p, p_i >= floors_i.

    Returns the allocation. KKT gives p_i = max(floor_i, mu - 1/h_i^2); mu is
    found exactly on the piecewise-linear total-power curve. Channels with
    h = 0 get their floor (which must then be 0).
    """
    h = _gains(gains)
    n = len(h)
    f = np.zeros(n) if floors is None else np.asarray(floors, dtype=float)
    if f.sum() > p * (1 + 1e-12) + 1e-300:
        raise ValueError("floors exceed the budget")
    extra = p - f.sum()
    alloc = f.copy()
    ok = h > 0
    if extra <= 0 or not ok.any():
        return alloc
    noise = np.full(n, np.inf)
    noise[ok] = 1.0 / h[ok] ** 2
    bp = np.where(ok, f + noise, np.inf)          # water level where channel starts taking power
    order = np.argsort(bp, kind="stable")
    for m, i in enumerate(order):
        if not np.isfinite(bp[i]):
            break
        cnt = m + 1
        act = order[:cnt]
        mu = (p - f.sum() + np.sum(f[act] + noise[act])) / cnt
        nxt = bp[order[cnt]] if cnt < n else np.inf
        if mu <= nxt:
            alloc[act] = np.maximum(f[act], mu - noise[act])
            alloc[act] += (p - alloc.sum()) / cnt  # round-off repair, keeps sum exact
            return alloc
    return alloc


def shannon_capacity(channel, p):
    """Water-filling capacity C(p) in nats and the optimal allocation."""
    h = _gains(channel)
    if p <= 0 or not np.any(h > 0):
        return 0.0, np.zeros(len(h))
    alloc = water_fill(h, p)
    return float(sum(sub_capacity(hi, pi) for hi, pi in zip(h, alloc))), alloc


def min_linear_power(scenario: Scenario, budget=ENUM_BUDGET) -> StabilityReport:
    lam = scenario.source.moduli
    h = scenario.channel.gains
    best, arg = best_assignment(lam, h, budget)
    part = Partition.from_assignment(arg, len(h))
    set_powers = tuple(min_power_for_set(S, h[i], lam) for i, S in enumerate(part.sets))
    C, _ = shannon_capacity(h, scenario.p)
    lin = linear_capacity(scenario, budget)
    return StabilityReport(
        feasible=bool(best < scenario.p),
        best_partition=part,
        min_power=best,
        set_powers=set_powers,
        shannon_capacity_at_p=C,
        linear_capacity_at_p=lin,
        matched=is_matched(scenario, budget),
        margin=scenario.p - best,
        log_det=float(np.sum(np.log(lam))),
    )


def linear_capacity(scenario: Scenario, budget=ENUM_BUDGET, strict=True) -> float:
    """Sup over feasible partitions/allocations of sum of used sub-channel capacities.

    Each used channel gets at least its set's minimum power and the slack is
    water-filled over the used channels. strict=False admits allocations on
    the boundary (the closure of the feasible set). -inf if nothing is feasible.
    """
    lam = scenario.source.moduli
    h = scenario.channel.gains
    p = scenario.p
    k, n = len(lam), len(h)
    best = -math.inf
    seen = set()
    for _, digits, cost in enumerate_assignment_costs(lam, h, budget):
        ok = cost < p if strict else cost <= p * (1 + 1e-12)
        for row in digits[ok]:
            used = tuple(sorted(set(row.tolist())))
            floors = np.array([min_power_for_set(np.flatnonzero(row == i), h[i], lam) for i in used])
            key = (used, tuple(np.round(floors, 12)))
            if key in seen:
                continue
            seen.add(key)
            hu = h[list(used)]
            alloc = water_fill(hu, p, np.minimum(floors, p))
            best = max(best, float(sum(sub_capacity(a, b) for a, b in zip(hu, alloc))))
    return best


def is_matched(scenario: Scenario, budget=ENUM_BUDGET, tol=MATCH_TOL) -> bool:
    """Sum of log|lambda|, linear capacity and Shannon capacity coincide at p."""
    rate = float(np.sum(np.log(scenario.source.moduli)))
    lin = linear_capacity(scenario, budget, strict=False)
    C, _ = shannon_capacity(scenario.channel, scenario.p)
    return bool(abs(rate - lin) <= tol and abs(lin - C) <= tol)


def scalar_channel_condition(source, h, p) -> bool:
    """Single sub-channel: feasible iff 1 + h^2 p > |det A|^2."""
    if np.ndim(h) > 0:
        hv = np.atleast_1d(h)
        if hv.size != 1:
            raise ShapeError("scalar channel condition needs exactly one sub-channel")
        h = float(hv[0])
    logdet2 = 2.0 * float(np.sum(np.log(np.abs(source.eigenvalues))))
    return bool(math.log1p(h * h * p) > logdet2)


def scalar_source_condition(lam, channel, p) -> bool:
    """Scalar source: feasible iff log|lambda| < 0.5 log(1 + h1^2 p) with h1 the best gain."""
    lam_arr = np.atleast_1d(lam)
    if lam_arr.size != 1:
        raise ShapeError("scalar source condition needs k = 1")
    h1 = float(np.max(_gains(channel)))
    return bool(math.log(abs(float(lam_arr[0]))) < sub_capacity(h1, p))


def suboptimality_gap(lam, channel, p):
    """(max_i C_i(p), C(p), ratio) for a scalar source; lam only fixes k = 1."""
    if np.atleast_1d(lam).size != 1:
        raise ShapeError("suboptimality gap is defined for k = 1")
    h = _gains(channel)
    lin = max(sub_capacity(hi, p) for hi in h)
    C, _ = shannon_capacity(h, p)
    ratio = 1.0 if C == 0 else lin / C
    return lin, C, ratio


def converse_threshold_power(lambdas, channel) -> float:
    """Smallest p with C(p) >= sum log|lambda| (any code, water-filling capacity)."""
    rate = float(np.sum(np.log(np.abs(np.atleast_1d(lambdas)))))
    h = _gains(channel)
    if rate <= 0:
        return 0.0
    hi = 1.0
    while shannon_capacity(h, hi)[0] < rate:
        hi *= 2.0
    return brentq(lambda q: shannon_capacity(h, q)[0] - rate, 0.0, hi, xtol=1e-14, rtol=1e-14)


def linear_threshold_power(lambdas, channel, budget=ENUM_BUDGET) -> float:
    return best_assignment(np.atleast_1d(lambdas), _gains(channel), budget)[0]


def ruhe_gap(Lam, H, V) -> float:
    """Tr(Lam V^T (HH^T)^{-1} V) - Tr(Lam (HH^T)^{-1}) for diagonal Lam, H.

    Lam is sorted descending and (HH^T)^{-1} ascending so the diagonal
    pairing is the smallest trace over rotations; the gap is then >= 0.
    """
    lam = np.sort(np.diag(np.atleast_2d(Lam)))[::-1]
    hinv = np.sort(1.0 / np.diag(np.atleast_2d(H)) ** 2)
    D = np.diag(hinv)
    return float(np.trace(np.diag(lam) @ V.T @ D @ V) - np.sum(lam * hinv))
