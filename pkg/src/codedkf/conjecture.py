"""Numerical probe of partition structure in minimum-power linear encoders.

For diagonal B (|b_j| < 1), diagonal H and an n x k matrix Gamma, J solves

    J = B J B - Gamma^T (I + H Pi H)^{-1} Gamma + B Gamma^T Gamma B.

The question is whether min tr(Pi) subject to J >= 0 is always attained by a
Gamma with one nonzero per column, i.e. by a partition of modes onto
sub-channels. With M_jl = 1 / (1 - b_j b_l) and c_i = h_i^2 pi_i / (1 + h_i^2 pi_i),

    J = M o (Gamma^T diag(c) Gamma) - Gamma^T Gamma,

which is linear in c. For a fixed Gamma and a ray c = t w the smallest
feasible t is a generalized eigenvalue, so the search runs over (Gamma, w)
only and every point it visits satisfies J >= eps t X > 0 exactly (a relative margin).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coded_kf import EncoderDesign, transmit_power
from .errors import IllConditioned, Infeasible, ModelError, ShapeError
from .linalg import (RiccatiStatus, SolverConfig, checked_inv, iterate_riccati,
                     solve_stable_lyapunov, symmetrize)
from .models import DiagonalChannel, SourceModel
from .stability import Partition, best_assignment, ranked_assignments

LOG_W_CLIP = 50.0
EMPTY_LOG_W = -30.0


@dataclass(frozen=True)
class ConjectureInstance:
    B_diag: np.ndarray
    H_diag: np.ndarray
    feasibility_budget: float = math.inf

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.B_diag, dtype=float))
        h = np.atleast_1d(np.asarray(self.H_diag, dtype=float))
        if np.any(np.abs(b) >= 1) or np.any(b == 0):
            raise ModelError("need 0 < |b_j| < 1")
        if np.any(h <= 0):
            raise ModelError("need h_i > 0")
        if not self.feasibility_budget > 0:
            raise ModelError("feasibility_budget must be positive")
        object.__setattr__(self, "B_diag", b)
        object.__setattr__(self, "H_diag", h)

    @property
    def k(self):
        return len(self.B_diag)

    @property
    def n(self):
        return len(self.H_diag)

    @property
    def lambdas(self):
        return 1.0 / np.abs(self.B_diag)

    @property
    def M(self):
        b = self.B_diag
        return 1.0 / (1.0 - np.outer(b, b))


@dataclass(frozen=True)
class SearchConfig:
    restarts: int = 50
    eps: float = 1e-8
    max_iter: int = 2000
    steps: tuple = (0.1, 0.01)
    xtol: float = 1e-9
    ftol: float = 1e-12
    tie_rtol: float = 1e-6
    sparsity_threshold: float = 1e-4
    counterexample_gap: float = 0.01
    structured_share: float = 0.5


@dataclass
class ConjectureResult:
    Gamma_star: np.ndarray
    Pi_star: np.ndarray
    trace: float
    column_nnz: list
    partition_structured: bool
    restarts_used: int
    best_objective_history: list
    oracle_trace: float = math.nan
    oracle_partition: list = field(default_factory=list)
    J_min_eig: float = math.nan
    J_norm: float = math.nan
    source_restart: int = -1

    @property
    def ratio(self):
        return self.trace / self.oracle_trace

    def to_dict(self):
        return {
            "Gamma_star": self.Gamma_star.tolist(),
            "Pi_star": np.diag(self.Pi_star).tolist(),
            "trace": self.trace,
            "column_nnz": list(map(int, self.column_nnz)),
            "partition_structured": self.partition_structured,
            "restarts_used": self.restarts_used,
            "best_objective_history": list(self.best_objective_history),
            "oracle_trace": self.oracle_trace,
            "oracle_partition": self.oracle_partition,
            "J_min_eig": self.J_min_eig,
            "J_norm": self.J_norm,
            "source_restart": self.source_restart,
        }


def _check_shapes(instance, Gamma, pi):
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    pi = np.asarray(pi, dtype=float)
    if pi.ndim == 2:
        pi = np.diag(pi)
    if Gamma.shape != (instance.n, instance.k) or pi.shape != (instance.n,):
        raise ShapeError(f"need Gamma {instance.n}x{instance.k} and {instance.n} powers")
    return Gamma, pi


def lyapunov_J(instance: ConjectureInstance, Gamma, Pi) -> np.ndarray:
    """J from the Lyapunov equation, solved directly."""
    Gamma, pi = _check_shapes(instance, Gamma, Pi)
    B = np.diag(instance.B_diag)
    h = instance.H_diag
    d = 1.0 / (1.0 + h**2 * pi)
    forcing = -(Gamma.T * d) @ Gamma + B @ Gamma.T @ Gamma @ B
    return symmetrize(solve_stable_lyapunov(B, forcing))


def hadamard_J(instance: ConjectureInstance, Gamma, Pi) -> np.ndarray:
    """Same J through the closed form M o (Gamma^T C Gamma) - Gamma^T Gamma."""
    Gamma, pi = _check_shapes(instance, Gamma, Pi)
    h2p = instance.H_diag**2 * pi
    c = h2p / (1.0 + h2p)
    return symmetrize(instance.M * ((Gamma.T * c) @ Gamma) - Gamma.T @ Gamma)


def sparsity_pattern(Gamma, rel_threshold=1e-4):
    """Per-column count of entries above rel_threshold * column max, and structure flag."""
    if not 0 < rel_threshold < 1:
        raise ValueError("rel_threshold must be in (0, 1)")
    G = np.abs(np.atleast_2d(np.asarray(Gamma, dtype=float)))
    colmax = G.max(axis=0)
    nz = (G > rel_threshold * colmax) & (colmax > 0)
    counts = nz.sum(axis=0)
    structured = bool(np.all(counts <= 1) and np.all(counts[colmax > 0] == 1))
    return counts.tolist(), structured


def partition_oracle(instance: ConjectureInstance):
    """Minimum total power over partitions, with b_j = 1/lambda_j."""
    cost, assign = best_assignment(instance.lambdas, instance.H_diag)
    return cost, Partition.from_assignment(assign, instance.n)


# --- batched objective and direct search -----------------------------------

def _unpack(x, n, k):
    N = x.shape[0]
    G = x[:, : n * k].reshape(N, n, k)
    nrm = np.linalg.norm(G, axis=1, keepdims=True)
    bad = (nrm[:, 0, :] < 1e-12).any(axis=1)
    G = G / np.where(nrm < 1e-12, 1.0, nrm)
    w = np.exp(np.clip(x[:, n * k:], -LOG_W_CLIP, LOG_W_CLIP))
    return G, w, bad


def min_power_on_ray(x, n, k, M, h2, eps):
    """Tr(Pi) at the smallest feasible point of each ray; inf where the ray is infeasible.

    x rows are (vec Gamma, log w). With X = M o (Gamma^T W Gamma) the
    constraint (1 - eps) t X - Gamma^T Gamma >= 0 holds iff
    t >= lambda_max(X^{-1/2} Gamma^T Gamma X^{-1/2}) / (1 - eps).
    The margin is relative so it does not blow up when M is ill-conditioned;
    J = t X - Gamma^T Gamma >= eps t X is then strictly positive definite.
    Returns (traces, pi, normalized Gamma).
    """
    G, w, bad = _unpack(x, n, k)
    GG = np.einsum("rij,rik->rjk", G, G)
    X = M * np.einsum("rij,ri,rik->rjk", G, w, G)
    ev, V = np.linalg.eigh(X)
    bad |= ~(ev[:, 0] > 1e-14 * np.abs(ev[:, -1]))
    ev = np.where(bad[:, None], 1.0, ev)
    Xis = (V / np.sqrt(ev)[:, None, :]) @ V.transpose(0, 2, 1)
    t = np.linalg.eigvalsh(Xis @ GG @ Xis)[:, -1] / (1.0 - eps)
    c = t[:, None] * w
    bad |= ~np.all(c < 1, axis=1)
    c = np.where(bad[:, None], 0.5, c)
    pi = c / ((1.0 - c) * h2)
    f = pi.sum(axis=1)
    f[bad] = np.inf
    return f, pi, G


def nelder_mead_batch(fun, X0, step, max_iter, xtol, ftol):
    """Adaptive Nelder-Mead run on a batch of independent starting points.

    fun maps an (N, d) array to N objective values. Each start evolves its own
    simplex; all trial points of an iteration are evaluated in one call.
    """
    R, d = X0.shape
    a, b, g, s = 1.0, 1.0 + 2.0 / d, 0.75 - 0.5 / d, 1.0 - 1.0 / d
    S = np.repeat(X0[:, None, :], d + 1, axis=1)
    idx = np.arange(d)
    S[:, idx + 1, idx] += step * (1.0 + np.abs(X0))
    F = fun(S.reshape(-1, d)).reshape(R, d + 1)
    active = np.ones(R, bool)
    for _ in range(max_iter):
        o = np.argsort(F, axis=1, kind="stable")
        S = np.take_along_axis(S, o[:, :, None], 1)
        F = np.take_along_axis(F, o, 1)
        xs = np.abs(S[:, 1:] - S[:, :1]).max(axis=(1, 2))
        with np.errstate(invalid="ignore"):
            fs = np.abs(F[:, -1] - F[:, 0]) <= ftol * np.maximum(1.0, np.abs(F[:, 0]))
        active &= ~((xs <= xtol) & fs) & np.isfinite(F[:, 0])
        if not active.any():
            break
        ai = np.flatnonzero(active)
        Sa, Fa = S[ai], F[ai]
        xo = Sa[:, :-1].mean(axis=1)
        xw = Sa[:, -1]
        xr = xo + a * (xo - xw)
        xe = xo + b * (xr - xo)
        xoc = xo + g * (xr - xo)
        xic = xo - g * (xo - xw)
        m = len(ai)
        fv = fun(np.concatenate([xr, xe, xoc, xic]))
        fr, fe, foc, fic = fv[:m], fv[m:2 * m], fv[2 * m:3 * m], fv[3 * m:]
        f0, fs2, fw = Fa[:, 0], Fa[:, -2], Fa[:, -1]
        newx = np.empty_like(xr)
        newf = np.full(m, np.nan)
        c1 = fr < f0
        ce = c1 & (fe < fr)
        c2 = ~c1 & (fr < fs2)
        c3 = ~c1 & ~c2 & (fr < fw) & (foc <= fr)
        c4 = ~c1 & ~c2 & (fr >= fw) & (fic < fw)
        for mask, xx, ff in ((ce, xe, fe), ((c1 & ~ce) | c2, xr, fr), (c3, xoc, foc), (c4, xic, fic)):
            newx[mask] = xx[mask]
            newf[mask] = ff[mask]
        shrink = np.isnan(newf)
        keep = ~shrink
        Sa[keep, -1] = newx[keep]
        Fa[keep, -1] = newf[keep]
        if shrink.any():
            si = np.flatnonzero(shrink)
            Ss = Sa[si, :1] + s * (Sa[si, 1:] - Sa[si, :1])
            Sa[si, 1:] = Ss
            Fa[si, 1:] = fun(Ss.reshape(-1, d)).reshape(len(si), d)
        S[ai] = Sa
        F[ai] = Fa
    j = np.argmin(F, axis=1)
    return S[np.arange(R), j], F[np.arange(R), j]


def _structured_start(assign, instance):
    n, k = instance.n, instance.k
    G = np.zeros((n, k))
    G[assign, np.arange(k)] = 1.0
    v = np.full(n, EMPTY_LOG_W)
    b2 = instance.B_diag**2
    for i in range(n):
        S = assign == i
        if S.any():
            v[i] = math.log(-math.expm1(float(np.sum(np.log(b2[S])))))
    return np.r_[G.ravel(), v]


def _snap(x, n, k, thr):
    G = x[: n * k].reshape(n, k).copy()
    colmax = np.abs(G).max(axis=0)
    G[np.abs(G) <= thr * colmax] = 0.0
    return np.r_[G.ravel(), x[n * k:]]


def starting_points(instance: ConjectureInstance, restarts: int, cfg: SearchConfig, seed):
    """Structured starts from the cheapest partitions, the rest random dense Gamma."""
    n, k = instance.n, instance.k
    n_struct = min(int(round(restarts * cfg.structured_share)), restarts)
    ranked = ranked_assignments(instance.lambdas, instance.H_diag, max(n_struct, 1))
    streams = np.random.SeedSequence(seed).spawn(restarts)
    X0, kinds = [], []
    for r in range(restarts):
        if r < n_struct:
            X0.append(_structured_start(ranked[r % len(ranked)][1], instance))
            kinds.append("structured")
        else:
            rng = np.random.default_rng(streams[r])
            X0.append(np.r_[rng.standard_normal(n * k), np.zeros(n)])
            kinds.append("dense")
    return np.array(X0).reshape(restarts, n * k + n), kinds


def solve_min_trace(instance: ConjectureInstance, restarts: int | None = None,
                    cfg: SearchConfig | None = None, seed=0) -> ConjectureResult:
    """Multi-start search for min tr(Pi) s.t. J(Gamma, Pi) >= 0 with relative margin eps.

    Among candidates within tie_rtol of the best, a partition-structured one
    is reported when present. Candidates above feasibility_budget are dropped.
    """
    cfg = cfg or SearchConfig()
    restarts = cfg.restarts if restarts is None else restarts
    n, k = instance.n, instance.k
    M, h2, eps = instance.M, instance.H_diag**2, cfg.eps
    oracle, opart = partition_oracle(instance)

    def fun(x):
        return min_power_on_ray(x, n, k, M, h2, eps)[0]

    cands = []          # (trace, structured, restart index, x)
    if restarts > 0:
        X, _ = starting_points(instance, restarts, cfg, seed)
        for step in cfg.steps:
            X, F = nelder_mead_batch(fun, X, step, cfg.max_iter, cfg.xtol, cfg.ftol)
        for r in range(restarts):
            x = X[r]
            xs = _snap(x, n, k, cfg.sparsity_threshold)
            fsn = fun(xs[None])[0]
            if fsn <= F[r] * (1 + 1e-9):
                x, F[r] = xs, fsn
            G = min_power_on_ray(x[None], n, k, M, h2, eps)[2][0]
            cands.append((float(F[r]), sparsity_pattern(G, cfg.sparsity_threshold)[1], r, x))
    x_or = _structured_start(opart.assignment(k), instance)
    cands.append((float(fun(x_or[None])[0]), True, -1, x_or))

    history, run = [], math.inf
    for f, _, r, _ in cands:
        if r >= 0:
            run = min(run, f)
            history.append(run)
    ok = [c for c in cands if np.isfinite(c[0]) and c[0] <= instance.feasibility_budget]
    if not ok:
        raise Infeasible("no feasible point within the feasibility budget")
    best = min(c[0] for c in ok)
    tied = [c for c in ok if c[0] <= best * (1 + cfg.tie_rtol)]
    f, _, r, x = min(tied, key=lambda c: (not c[1], c[0], c[2] if c[2] >= 0 else restarts))
    tr, pi, G = (v[0] for v in min_power_on_ray(x[None], n, k, M, h2, eps))
    counts, structured = sparsity_pattern(G, cfg.sparsity_threshold)
    J = lyapunov_J(instance, G, pi)
    evJ = np.linalg.eigvalsh(J)
    return ConjectureResult(G, np.diag(pi), float(tr), counts, structured, restarts, history,
                            float(oracle), opart.to_list(), float(evJ[0]),
                            float(np.max(np.abs(evJ))), int(r))


def certified(result: ConjectureResult, rel_slack=1e-8) -> bool:
    return result.J_min_eig >= -rel_slack * result.J_norm


ALPHA_LADDER = (1e3, 1e4, 1e5)


def realize_encoder(instance: ConjectureInstance, Gamma, Pi, alpha=None, inflate=1e-4,
                    cfg: SolverConfig | None = None):
    """Turn (Gamma, Pi) into a fixed-gain encoder and check it with the Riccati engine.

    Source A = diag(1/b), Q = I. With Gamma_tilde = alpha Pi^{1/2} Gamma, the
    covariance P is taken from the Lyapunov form of the fixed point, the
    gain is Gamma_tilde P^{-1}, and the Riccati recursion is then run on that
    fixed gain from P0 = Q. Pi is inflated by (1 + inflate) so J is strictly
    positive. The realized power approaches tr(Pi) as alpha grows, more
    slowly when J is nearly singular, so by default alpha walks up
    ALPHA_LADDER and stops at the first converged design within the target.
    Returns a dict with status, realized power, tr(P*) and every attempt.
    """
    Gamma, pi = _check_shapes(instance, Gamma, Pi)
    pi = pi * (1.0 + inflate)
    order = np.argsort(-instance.H_diag, kind="stable")
    h, Gamma, pi = instance.H_diag[order], Gamma[order], pi[order]
    attempts = []
    for a in (ALPHA_LADDER if alpha is None else (alpha,)):
        out = _realize_once(instance, h, Gamma, pi, a, cfg)
        attempts.append({key: out.get(key) for key in ("alpha", "status", "power")})
        if out["converged"] and out["power"] <= out["target_power"]:
            break
    out["attempts"] = attempts
    return out


def _realize_once(instance, h, Gamma, pi, alpha, cfg):
    k, n = instance.k, instance.n
    Binv = np.diag(instance.B_diag)
    A = np.diag(1.0 / instance.B_diag)
    H = np.diag(h)
    Gt = alpha * np.sqrt(pi)[:, None] * Gamma
    Rf = np.eye(k) - A @ Gt.T @ H @ np.diag(1.0 / (1.0 + h**2 * pi)) @ H @ Gt @ A.T
    # P = A P A^T + Rf  <=>  P = B P B^T - B Rf B^T with B = A^{-1}
    P = symmetrize(solve_stable_lyapunov(Binv, -Binv @ Rf @ Binv.T))
    out = {"alpha": alpha, "target_power": float(pi.sum()), "converged": False}
    if np.linalg.eigvalsh(P)[0] <= 0:
        out["status"] = "P not positive definite"
        return out
    try:
        G = Gt @ checked_inv(P, "P")
    except IllConditioned as exc:
        out["status"] = str(exc)
        return out
    src = SourceModel(A, np.eye(k))
    design = EncoderDesign.fixed(G)
    res = iterate_riccati(src, DiagonalChannel(h), design, cfg)
    out.update(status=res.status.value, converged=res.converged, iterations=res.iterations)
    if res.converged:
        C = H @ G
        K = A @ res.P @ C.T @ np.linalg.inv(C @ res.P @ C.T + np.eye(n))
        out.update(gain=G.tolist(), gains_sorted=h.tolist(), P=res.P.tolist(),
                   power=transmit_power(design, res.P), trace_P=float(np.trace(res.P)),
                   closed_loop_radius=float(np.max(np.abs(np.linalg.eigvals(A - K @ C)))))
    return out


def sample_instance(rng, n, k, b_range=(0.1, 0.9), h_range=(0.1, 10.0), min_gap=1e-6):
    """b uniform in b_range (pairwise distinct), h log-uniform in h_range."""
    while True:
        b = rng.uniform(*b_range, size=k)
        if k < 2 or np.min(np.diff(np.sort(b))) > min_gap:
            break
    h = np.exp(rng.uniform(math.log(h_range[0]), math.log(h_range[1]), size=n))
    return b, h


def run_conjecture_sweep(dims, instances_per_dim, seed, restarts=None, cfg=None,
                         budget_factor=10.0, verify=True, progress=None):
    """Random instances per (n, k); returns a JSON-ready report.

    Instance j of dims entry d draws from SeedSequence(seed, spawn_key=(d, j)),
    so reports are reproducible and entries are independent of each other.
    """
    cfg = cfg or SearchConfig()
    records, table = [], []
    for di, (n, k) in enumerate(dims):
        rows = []
        for j in range(instances_per_dim):
            ss = np.random.SeedSequence(seed, spawn_key=(di, j))
            rng = np.random.default_rng(ss)
            b, h = sample_instance(rng, n, k)
            oracle, _ = partition_oracle(ConjectureInstance(b, h))
            inst = ConjectureInstance(b, h, budget_factor * oracle)
            res = solve_min_trace(inst, restarts, cfg, seed=ss.generate_state(1)[0])
            gap = (oracle - res.trace) / oracle
            within = abs(res.trace - oracle) <= 0.01 * oracle
            passes = res.partition_structured and within
            rec = {"n": n, "k": k, "index": j, "b": b.tolist(), "h": h.tolist(),
                   **res.to_dict(), "ratio_to_oracle": res.ratio,
                   "within_1pct": bool(within), "passes": bool(passes),
                   "candidate_counterexample": not passes,
                   "below_oracle_by_more_than_gap": bool(gap > cfg.counterexample_gap),
                   "certified": certified(res)}
            cand = not passes
            if cand and verify:
                rec["riccati_check"] = realize_encoder(inst, res.Gamma_star, res.Pi_star)
            rows.append(rec)
            if progress:
                progress(rec)
        records.extend(rows)
        if rows:
            table.append({"n": n, "k": k, "instances": len(rows),
                          "structured_fraction": float(np.mean([r["partition_structured"] for r in rows])),
                          "pass_fraction": float(np.mean([r["passes"] for r in rows])),
                          "median_ratio": float(np.median([r["ratio_to_oracle"] for r in rows])),
                          "min_ratio": float(np.min([r["ratio_to_oracle"] for r in rows])),
                          "candidate_counterexamples": int(sum(r["candidate_counterexample"] for r in rows))})
    total = len(records)
    return {
        "seed": int(seed),
        "dims": [list(d) for d in dims],
        "instances_per_dim": int(instances_per_dim),
        "restarts": int(cfg.restarts if restarts is None else restarts),
        "table": table,
        "overall": {
            "instances": total,
            "structured_fraction": float(np.mean([r["partition_structured"] for r in records])) if total else None,
            "pass_fraction": float(np.mean([r["passes"] for r in records])) if total else None,
            "candidate_counterexamples": int(sum(r["candidate_counterexample"] for r in records)),
            "below_oracle_by_more_than_gap": int(sum(r["below_oracle_by_more_than_gap"] for r in records)),
        },
        "candidate_counterexamples": [r for r in records if r["candidate_counterexample"]],
        "records": records,
    }
