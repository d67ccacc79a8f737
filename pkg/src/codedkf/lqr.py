"""Control over the coded channel: LQR design, closed-loop simulation, separation check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coded_kf import EncoderDesign
from .errors import InsufficientData, ModelError, NotStabilizable, ShapeError
from .linalg import as_square, spectral_radius, symmetrize
from .models import DiagonalChannel, Scenario, SourceModel, _is_spd
from .simulation import SimulationConfig, run_estimation_sim, steady_state

PBH_RTOL = 1e-10


@dataclass(frozen=True)
class ControlSystem:
    """S_{t+1} = A S_t + B U_t + W_t with stage cost S^T C S + U^T E U.

    allow_singular_E admits E = 0 (pseudo-inverse in the Riccati step);
    otherwise E must be positive definite.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    C_cost: np.ndarray
    E_cost: np.ndarray
    allow_singular_E: bool = False

    def __post_init__(self):
        A = as_square(self.A, "A")
        k = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(k, -1)
        Q, C, E = (as_square(M, nm) for M, nm in ((self.Q, "Q"), (self.C_cost, "C_cost"),
                                                 (self.E_cost, "E_cost")))
        if Q.shape != (k, k) or C.shape != (k, k) or E.shape != (B.shape[1],) * 2:
            raise ShapeError("control system dimensions are inconsistent")
        if not _is_spd(Q):
            raise ModelError("process noise covariance Q must be positive definite")
        if not _is_spd(C):
            raise ModelError("state cost C must be positive definite")
        if not self.allow_singular_E and not _is_spd(E):
            raise ModelError("input cost E must be positive definite")
        for nm, M in (("A", A), ("B", B), ("Q", Q), ("C_cost", C), ("E_cost", E)):
            object.__setattr__(self, nm, M)

    @property
    def source(self) -> SourceModel:
        return SourceModel(self.A, self.Q)


@dataclass(frozen=True)
class LqrDesign:
    F: np.ndarray
    K: np.ndarray
    full_info_cost: float
    Lam: np.ndarray   # E + B^T F B, the weight on the gain error


def check_stabilizability_detectability(system: ControlSystem) -> list[str]:
    """PBH tests on modes with |lambda| >= 1."""
    A, B = system.A, system.B
    k = A.shape[0]
    Ch = np.linalg.cholesky(symmetrize(system.C_cost)).T if _is_spd(system.C_cost) else system.C_cost
    out = []
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1:
            continue
        M = A - lam * np.eye(k)
        for name, blk in (("stabilizable", np.hstack([M, B])), ("detectable", np.vstack([M, Ch]))):
            s = np.linalg.svd(blk, compute_uv=False)
            if np.sum(s > PBH_RTOL * max(s[0], 1.0)) < k:
                out.append(f"(A, {'B' if name == 'stabilizable' else 'C^1/2'}) not {name} "
                           f"at mode lambda = {complex(lam):.6g}")
    return out


def solve_control_dare(system: ControlSystem, tolerance=1e-10, max_iterations=100_000) -> LqrDesign:
    """Fixed-point iteration F <- C + A^T (F - F B (E + B^T F B)^{-1} B^T F) A from F = C."""
    bad = check_stabilizability_detectability(system)
    if bad:
        raise NotStabilizable("; ".join(bad))
    A, B, C, E = system.A, system.B, system.C_cost, system.E_cost
    F = C.copy()
    for _ in range(max_iterations):
        Lam = E + B.T @ F @ B
        Li = np.linalg.pinv(Lam) if system.allow_singular_E else np.linalg.inv(Lam)
        Fn = symmetrize(C + A.T @ (F - F @ B @ Li @ B.T @ F) @ A)
        if not np.all(np.isfinite(Fn)) or np.trace(Fn) > 1e15:
            raise NotStabilizable("control Riccati iteration diverged")
        done = np.max(np.abs(Fn - F)) <= tolerance * max(1.0, np.max(np.abs(Fn)))
        F = Fn
        if done:
            break
    else:
        raise NotStabilizable("control Riccati iteration did not converge")
    Lam = E + B.T @ F @ B
    Li = np.linalg.pinv(Lam) if system.allow_singular_E else np.linalg.inv(Lam)
    K = Li @ B.T @ F @ A
    if spectral_radius(A - B @ K) >= 1:
        raise NotStabilizable("closed loop A - BK is not stable")
    return LqrDesign(F, K, float(np.trace(system.Q @ F)), Lam)


def control_residual(system: ControlSystem, F) -> float:
    A, B, C, E = system.A, system.B, system.C_cost, system.E_cost
    Lam = E + B.T @ F @ B
    Li = np.linalg.pinv(Lam) if system.allow_singular_E else np.linalg.inv(Lam)
    return float(np.max(np.abs(C + A.T @ (F - F @ B @ Li @ B.T @ F) @ A - F)))


def _scenario(system, channel):
    ch = channel if isinstance(channel, DiagonalChannel) else DiagonalChannel(np.atleast_1d(channel))
    return Scenario(system.source, ch, 1.0)


def run_control_sim(system: ControlSystem, channel, design: EncoderDesign, lqr: LqrDesign,
                    cfg: SimulationConfig, P_star=None):
    """Time-averaged LQR cost and mean ||S_t||^2 with U_t = -K Shat_t.

    Both sides add B U_t to their predictions, so the prediction error obeys
    the same recursion as without control. Returns (cost, state_power, summary).
    """
    scen = _scenario(system, channel)
    summ = run_estimation_sim(scen, design, cfg, P_star=P_star,
                              control=(system.B, lqr.K, system.C_cost, system.E_cost))
    return summ.extras["lqr_cost"], summ.extras["state_power"], summ


@dataclass(frozen=True)
class SeparationReport:
    lhs: float
    rhs: float
    rel_dev: float
    rhs_weighted: float
    rel_dev_weighted: float
    full_info_cost: float
    trace_P: float
    estimation_mse_in_loop: float
    diverged: bool

    def to_dict(self):
        return dict(self.__dict__)


def verify_separation(system, channel, design, lqr, cfg, P_star=None) -> SeparationReport:
    """Empirical LQR cost against tr(QF) + tr(P*) and against tr(QF) + tr(K^T Lam K P*).

    The second form weights the prediction error by K^T (E + B^T F B) K,
    which is what a certainty-equivalent controller actually pays.
    """
    if cfg.horizon - cfg.burn_in <= 0:
        raise InsufficientData("no samples after burn-in")
    scen = _scenario(system, channel)
    if P_star is None:
        P_star = steady_state(scen, design)
    cost, _, summ = run_control_sim(system, channel, design, lqr, cfg, P_star)
    if P_star is None or summ.diverged:
        return SeparationReport(cost, math.inf, math.inf, math.inf, math.inf,
                                lqr.full_info_cost, math.inf, summ.empirical_mse, True)
    trP = float(np.trace(P_star))
    rhs = lqr.full_info_cost + trP
    rhs_w = lqr.full_info_cost + float(np.trace(lqr.K.T @ lqr.Lam @ lqr.K @ P_star))
    return SeparationReport(cost, rhs, abs(cost - rhs) / rhs, rhs_w, abs(cost - rhs_w) / rhs_w,
                            lqr.full_info_cost, trP, summ.empirical_mse, False)
