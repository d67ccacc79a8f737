"""Dense linear-algebra kernels: Lyapunov solves, Riccati iteration, PSD checks."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import IllConditioned, ShapeError, UnstableMap

COND_LIMIT = 1e12
KRONECKER_MAX_DIM = 8


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-10
    max_iterations: int = 100_000
    # None means 1e12 * trace(Q) of the source being iterated
    divergence_trace_bound: float | None = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        b = self.divergence_trace_bound
        if b is not None and not (b > 0 and np.isfinite(b)):
            raise ValueError("divergence_trace_bound must be positive and finite")

    def trace_bound(self, Q) -> float:
        if self.divergence_trace_bound is not None:
            return float(self.divergence_trace_bound)
        return 1e12 * float(np.trace(Q))


class RiccatiStatus(str, Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class RiccatiOutcome:
    status: RiccatiStatus
    P: np.ndarray | None
    iterations: int

    @property
    def converged(self) -> bool:
        return self.status is RiccatiStatus.CONVERGED


def as_square(M, name="matrix") -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {M.shape}")
    return M


def symmetrize(M):
    return 0.5 * (M + M.T)


def spectral_radius(M) -> float:
    M = as_square(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def checked_inv(M, name="matrix", cond_limit=COND_LIMIT) -> np.ndarray:
    """Inverse of a square matrix, refusing when cond(M) exceeds cond_limit."""
    M = as_square(M, name)
    c = np.linalg.cond(M)
    if not np.isfinite(c) or c > cond_limit:
        raise IllConditioned(f"{name} has condition number {c:.3g} > {cond_limit:.1e}")
    return np.linalg.inv(M)


def kron_lyapunov(F, Q) -> np.ndarray:
    """Solve X = F X F^T + Q by vectorization. Exact but O(k^6)."""
    F = as_square(F, "F")
    Q = as_square(Q, "Q")
    k = F.shape[0]
    if Q.shape != (k, k):
        raise ShapeError(f"F is {F.shape} but Q is {Q.shape}")
    x = np.linalg.solve(np.eye(k * k) - np.kron(F, F), Q.reshape(-1))
    return x.reshape(k, k)


def solve_stable_lyapunov(F, Q, tolerance=1e-14, max_iterations=1_000_000,
                          method="auto") -> np.ndarray:
    """Unique X with X = F X F^T + Q for a Schur-stable F.

    method "kron" vectorizes, "fixed_point" iterates X <- F X F^T + Q (geometric
    convergence at rate rho(F)^2), "auto" picks kron for k <= 8.
    """
    F = as_square(F, "F")
    Q = as_square(Q, "Q")
    if Q.shape != F.shape:
        raise ShapeError(f"F is {F.shape} but Q is {Q.shape}")
    rho = spectral_radius(F)
    if rho >= 1.0:
        raise UnstableMap(f"spectral radius {rho:.6g} >= 1")
    k = F.shape[0]
    if method not in ("auto", "kron", "fixed_point"):
        raise ValueError(f"unknown method {method!r}")
    if method == "kron" or (method == "auto" and k <= KRONECKER_MAX_DIM):
        X = kron_lyapunov(F, Q)
    else:
        X = Q.copy()
        for _ in range(max_iterations):
            Xn = F @ X @ F.T + Q
            if np.max(np.abs(Xn - X)) <= tolerance * max(1.0, np.max(np.abs(Xn))):
                X = Xn
                break
            X = Xn
    if np.allclose(Q, Q.T):
        X = symmetrize(X)
    return X


def riccati_map(P, A, Q, C, N) -> np.ndarray:
    """One step of the prediction Riccati recursion for observation y = C x + v, cov(v) = N."""
    S = C @ P @ C.T + N
    L = A @ P @ C.T
    return symmetrize(A @ P @ A.T + Q - L @ np.linalg.solve(S, L.T))


def _step(P, source, channel, design):
    C, N = design.observation(P, channel)
    return riccati_map(P, source.A, source.Q, C, N)


def iterate_riccati(source, channel, design, cfg: SolverConfig | None = None) -> RiccatiOutcome:
    """Run the coded-filter Riccati recursion from P0 = Q and classify the outcome.

    ``design`` supplies ``observation(P, channel) -> (C, N)``; the recursion is
    P <- A P A^T + Q - A P C^T (C P C^T + N)^{-1} C P A^T.
    Convergence is declared when successive iterates differ by at most
    tolerance * max(1, max|P|).
    """
    cfg = cfg or SolverConfig()
    A, Q = source.A, source.Q
    bound = cfg.trace_bound(Q)
    P = Q.copy()
    for it in range(1, cfg.max_iterations + 1):
        Pn = _step(P, source, channel, design)
        if not np.all(np.isfinite(Pn)) or np.trace(Pn) > bound:
            return RiccatiOutcome(RiccatiStatus.DIVERGED, None, it)
        if np.linalg.cond(Pn) > COND_LIMIT:
            raise IllConditioned(f"P_t became singular at iteration {it}")
        diff = np.max(np.abs(Pn - P))
        P = Pn
        if diff <= cfg.tolerance * max(1.0, np.max(np.abs(P))):
            return RiccatiOutcome(RiccatiStatus.CONVERGED, P, it)
    return RiccatiOutcome(RiccatiStatus.MAX_ITERATIONS, None, cfg.max_iterations)


def verify_dare_fixed_point(P, source, channel, design) -> float:
    """Max-abs residual of the fixed-point equation at P, divided by max(1, max|P|)."""
    P = as_square(P, "P")
    if np.linalg.cond(P) > COND_LIMIT or np.min(np.linalg.eigvalsh(symmetrize(P))) <= 0:
        raise IllConditioned("P is not positive definite within the conditioning bound")
    R = _step(P, source, channel, design) - P
    return float(np.max(np.abs(R)) / max(1.0, np.max(np.abs(P))))


def is_psd(M, slack=0.0, sym_tol=1e-9) -> bool:
    M = as_square(M)
    scale = max(1.0, np.max(np.abs(M))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > sym_tol * scale:
        raise ShapeError("matrix is not symmetric")
    if M.size == 0:
        return True
    return bool(np.linalg.eigvalsh(symmetrize(M))[0] >= -slack)


def psd_sqrt(M) -> np.ndarray:
    """Symmetric square root via eigh; tiny negative eigenvalues are clipped."""
    w, V = np.linalg.eigh(symmetrize(as_square(M)))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def inv_sqrt_spd(M) -> np.ndarray:
    w, V = np.linalg.eigh(symmetrize(as_square(M)))
    if w[0] <= 0:
        raise IllConditioned("matrix is not positive definite")
    return (V / np.sqrt(w)) @ V.T
