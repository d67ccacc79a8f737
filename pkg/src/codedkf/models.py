"""Source and channel models, canonical forms and assumption checks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, ModelError, ShapeError
from .linalg import as_square, inv_sqrt_spd, symmetrize

DISTINCT_RTOL = 1e-8
RANK_RTOL = 1e-10
GAIN_FLOOR = 1e-12


def _is_spd(M) -> bool:
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max(initial=0))):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class SourceModel:
    """Gauss-Markov source S_{t+1} = A S_t + W_t, W_t ~ N(0, Q)."""

    A: np.ndarray
    Q: np.ndarray
    eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = as_square(self.A, "A")
        Q = as_square(self.Q, "Q")
        if Q.shape != A.shape:
            raise ShapeError(f"A is {A.shape} but Q is {Q.shape}")
        ev = np.linalg.eigvals(A) if A.size else np.zeros(0)
        ev = ev[np.argsort(-np.abs(ev), kind="stable")]
        if np.all(np.abs(ev.imag) <= 1e-12 * np.maximum(1.0, np.abs(ev))):
            ev = ev.real
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", symmetrize(Q))
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def k(self) -> int:
        return self.A.shape[0]

    @property
    def moduli(self) -> np.ndarray:
        """|lambda_j| in the order of A's diagonal (A must be diagonal)."""
        return np.abs(np.diag(self.A))

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.A == np.diag(np.diag(self.A))))

    @classmethod
    def diagonal(cls, lambdas, Q=None):
        lam = np.asarray(lambdas, dtype=float)
        return cls(np.diag(lam), np.eye(len(lam)) if Q is None else Q)


@dataclass(frozen=True)
class ChannelModel:
    """Raw channel Y = H X + Z, Z ~ N(0, R)."""

    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = as_square(self.R, "R")
        if R.shape[0] != H.shape[0]:
            raise ShapeError(f"H has {H.shape[0]} outputs but R is {R.shape}")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class DiagonalChannel:
    """Parallel sub-channels Ybar_i = h_i Xbar_i + Zbar_i with unit noise.

    Xbar = input_transform @ X and Ybar = output_transform @ Y relate it to
    the raw channel it came from.
    """

    gains: np.ndarray
    input_transform: np.ndarray | None = None
    output_transform: np.ndarray | None = None

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gains, dtype=float))
        if g.ndim != 1 or np.any(g < 0) or not np.all(np.isfinite(g)):
            raise ModelError("gains must be a vector of finite nonnegative reals")
        if np.any(np.diff(g) > 0):
            raise ModelError("gains must be sorted in descending order")
        g = np.where(g < GAIN_FLOOR, 0.0, g)
        n = len(g)
        Vt = np.eye(n) if self.input_transform is None else np.asarray(self.input_transform, float)
        Ut = np.eye(n) if self.output_transform is None else np.asarray(self.output_transform, float)
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "input_transform", Vt)
        object.__setattr__(self, "output_transform", Ut)

    @property
    def n(self) -> int:
        return len(self.gains)

    @property
    def H(self) -> np.ndarray:
        return np.diag(self.gains)

    @property
    def usable(self) -> np.ndarray:
        return self.gains > 0

    @classmethod
    def from_gains(cls, gains):
        """Diagonal channel from unsorted gains; sorted descending."""
        return cls(np.sort(np.abs(np.asarray(gains, dtype=float)))[::-1])


@dataclass(frozen=True)
class Scenario:
    source: SourceModel
    channel: DiagonalChannel
    p: float
    raw_channel: ChannelModel | None = None

    def __post_init__(self):
        if not (self.p > 0 and np.isfinite(self.p)):
            raise ModelError(f"power budget must be positive, got {self.p}")


def diagonalize_channel(raw: ChannelModel) -> DiagonalChannel:
    """Whiten the noise and rotate into parallel sub-channels via an SVD."""
    if not _is_spd(raw.R):
        raise ModelError("noise covariance R must be symmetric positive definite")
    Rw = inv_sqrt_spd(raw.R)
    m, n = raw.H.shape
    U, s, Vt = np.linalg.svd(Rw @ raw.H)
    gains = np.zeros(n)
    gains[: len(s)] = s
    # deterministic signs: largest entry of each right singular vector positive
    for i in range(min(m, n)):
        j = np.argmax(np.abs(Vt[i]))
        if Vt[i, j] < 0:
            Vt[i] *= -1
            U[:, i] *= -1
    return DiagonalChannel(gains, Vt, U.T @ Rw)


def _fix_signs(V):
    V = V.copy()
    for j in range(V.shape[1]):
        i = np.argmax(np.abs(V[:, j]))
        if V[i, j] < 0:
            V[:, j] *= -1
    return V


def canonicalize_source(A_raw, Q_raw, strip_stable=False):
    """Diagonalize the source. Returns (SourceModel, T) with T A_raw T^{-1} diagonal.

    An already diagonal A keeps its order and T = I. Otherwise modes are
    ordered by descending modulus. With strip_stable=True modes with
    |lambda| < 1 are dropped (with a warning) and T keeps only the rows of the
    unstable modes, so the returned source is the projection T S.
    """
    A = as_square(A_raw, "A")
    Q = as_square(Q_raw, "Q")
    if Q.shape != A.shape:
        raise ShapeError(f"A is {A.shape} but Q is {Q.shape}")
    if not _is_spd(Q):
        raise ModelError("Q must be symmetric positive definite")
    k = A.shape[0]
    if np.all(A == np.diag(np.diag(A))):
        lam = np.diag(A).copy()
        T = np.eye(k)
    else:
        ev, V = np.linalg.eig(A)
        if np.any(np.abs(ev.imag) > 1e-10 * np.maximum(1.0, np.abs(ev))):
            raise AssumptionViolation(
                "complex eigenvalue pairs are not supported; a real diagonal form is required")
        order = np.argsort(-np.abs(ev.real), kind="stable")
        lam = ev.real[order]
        V = _fix_signs(V.real[:, order])
        if np.linalg.cond(V) > 1e10:
            raise AssumptionViolation("A is not diagonalizable (repeated eigenvalues)")
        T = np.linalg.inv(V)
    _check_distinct(lam)
    mod = np.abs(lam)
    if np.any(np.abs(mod - 1.0) <= 1e-12):
        raise AssumptionViolation("marginally stable mode with |lambda| = 1")
    stable = mod < 1.0
    if np.any(stable):
        if not strip_stable:
            raise AssumptionViolation(f"source is not strictly unstable: |lambda| = {mod[stable]}")
        warnings.warn(f"dropping {int(stable.sum())} stable mode(s) {lam[stable]}; "
                      "they have finite error without communication", stacklevel=2)
        lam, T = lam[~stable], T[~stable]
    Qn = symmetrize(T @ Q @ T.T)
    return SourceModel(np.diag(lam), Qn), T


def _check_distinct(lam):
    lam = np.asarray(lam)
    for i in range(len(lam)):
        for j in range(i + 1, len(lam)):
            scale = max(abs(lam[i]), abs(lam[j]), 1e-300)
            if abs(lam[i] - lam[j]) <= DISTINCT_RTOL * scale:
                raise AssumptionViolation(f"repeated eigenvalue {lam[i]}")


def controllable(A, Bm) -> bool:
    A = np.asarray(A, float)
    Bm = np.atleast_2d(np.asarray(Bm, float))
    k = A.shape[0]
    blocks, X = [], Bm
    for _ in range(k):
        blocks.append(X)
        X = A @ X
    s = np.linalg.svd(np.hstack(blocks), compute_uv=False)
    return bool(s.size and np.sum(s > RANK_RTOL * s[0]) == k)


def validate_assumptions(scenario: Scenario) -> list[str]:
    """List of violated standing assumptions; empty when the scenario is valid."""
    out = []
    src = scenario.source
    if not _is_spd(src.Q):
        out.append("Q is not positive definite")
    elif not controllable(src.A, np.linalg.cholesky(src.Q)):
        out.append("(A, Q^1/2) is not controllable")
    ev = src.eigenvalues
    if np.iscomplexobj(ev):
        out.append("complex eigenvalues")
    mod = np.abs(ev)
    if np.any(mod <= 1.0):
        out.append(f"not strictly unstable: |lambda| = {mod[mod <= 1.0].tolist()}")
    try:
        _check_distinct(ev)
    except AssumptionViolation:
        out.append("repeated eigenvalues")
    if scenario.raw_channel is not None and not _is_spd(scenario.raw_channel.R):
        out.append("R is not positive definite")
    if scenario.channel.n < 1:
        out.append("channel has no inputs")
    return out
