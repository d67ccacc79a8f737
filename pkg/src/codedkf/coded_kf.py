"""Innovation encoder, Kalman decoder and the partition-based encoder construction.

An encoder sends X_t = G_t (S_t - Shat_t) + M_t with M_t ~ N(0, Omega).
Writing G_t = Gamma_tilde P_t^{-1} recovers the usual parametrization.

Two modes are supported:

* fixed gain (pi is None): G_t = gain for every t.
* power-normalized (pi given): row i of G_t is gain_i scaled so that its
  expected power g_i P_t g_i^T equals pi_i. This keeps Gamma_tilde P_t^{-1}
  Gamma_tilde^T = diag(pi) along the whole recursion, so the fixed point of
  the Riccati recursion is the one whose power is sum(pi) + tr(Omega).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConstructionFailed, IllConditioned, InfeasiblePartition, ShapeError
from .linalg import (COND_LIMIT, RiccatiStatus, SolverConfig, checked_inv, iterate_riccati,
                     symmetrize)
from .models import DiagonalChannel, Scenario, SourceModel
from .stability import Partition, check_partition


@dataclass(frozen=True)
class EncoderDesign:
    gain: np.ndarray
    Omega: np.ndarray | None = None
    pi: np.ndarray | None = None
    partition: Partition | None = None
    alpha: float | None = None

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.gain, dtype=float))
        n = G.shape[0]
        Om = np.zeros((n, n)) if self.Omega is None else np.atleast_2d(np.asarray(self.Omega, float))
        if Om.shape != (n, n):
            raise ShapeError(f"Omega must be {n}x{n}")
        if np.min(np.linalg.eigvalsh(symmetrize(Om))) < -1e-12:
            raise ShapeError("Omega must be positive semidefinite")
        pi = None if self.pi is None else np.asarray(self.pi, dtype=float).reshape(-1)
        if pi is not None and (pi.shape != (n,) or np.any(pi < 0)):
            raise ShapeError(f"pi must be {n} nonnegative values")
        object.__setattr__(self, "gain", G)
        object.__setattr__(self, "Omega", symmetrize(Om))
        object.__setattr__(self, "pi", pi)

    @property
    def n(self):
        return self.gain.shape[0]

    @property
    def k(self):
        return self.gain.shape[1]

    @property
    def normalized(self) -> bool:
        return self.pi is not None

    def encoder_gain(self, P) -> np.ndarray:
        """G_t for prediction error covariance P."""
        if self.pi is None:
            return self.gain
        g = self.gain
        q = np.einsum("ij,jk,ik->i", g, P, g)
        scale = np.zeros(self.n)
        on = (self.pi > 0) & (q > 0)
        scale[on] = np.sqrt(self.pi[on] / q[on])
        return g * scale[:, None]

    def gamma_tilde(self, P) -> np.ndarray:
        return self.encoder_gain(P) @ P

    def observation(self, P, channel):
        """Observation map C = H G_t and noise covariance I + H Omega H^T seen by the decoder."""
        H = _H(channel)
        return H @ self.encoder_gain(P), np.eye(self.n) + H @ self.Omega @ H.T

    def check_dims(self, source: SourceModel, channel):
        n = len(_gains(channel))
        if self.gain.shape != (n, source.k):
            raise ShapeError(f"design is {self.gain.shape}, scenario needs ({n}, {source.k})")

    @classmethod
    def from_gamma_tilde(cls, Gamma_tilde, P, Omega=None, **kw):
        """Design whose gain at covariance P equals Gamma_tilde P^{-1}, power-normalized there."""
        Gt = np.atleast_2d(np.asarray(Gamma_tilde, dtype=float))
        Pinv = checked_inv(P, "P")
        G = Gt @ Pinv
        pi = np.einsum("ij,jk,ik->i", Gt, Pinv, Gt)
        return cls(G, Omega, pi, **kw)

    @classmethod
    def fixed(cls, gain, Omega=None, **kw):
        return cls(gain, Omega, None, **kw)

    def to_dict(self):
        return {
            "gain": self.gain.tolist(),
            "Omega": self.Omega.tolist(),
            "pi": None if self.pi is None else self.pi.tolist(),
            "partition": None if self.partition is None else self.partition.to_list(),
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, d):
        part = d.get("partition")
        return cls(np.asarray(d["gain"], float), np.asarray(d["Omega"], float),
                   None if d.get("pi") is None else np.asarray(d["pi"], float),
                   None if part is None else Partition(tuple(tuple(s) for s in part)),
                   d.get("alpha"))


def _gains(channel):
    return channel.gains if isinstance(channel, DiagonalChannel) else np.atleast_1d(channel)


def _guard(P):
    if np.linalg.cond(P) > COND_LIMIT:
        raise IllConditioned("P is numerically singular")


def _H(channel):
    return np.diag(_gains(channel))


@dataclass(frozen=True)
class FilterState:
    S_hat: np.ndarray
    P: np.ndarray
    t: int = 0


def initial_state(source: SourceModel) -> FilterState:
    return FilterState(np.zeros(source.k), source.Q.copy(), 0)


def innovation_encode(design: EncoderDesign, s, state: FilterState, noise_draw=None) -> np.ndarray:
    """Channel input G_t (s - Shat_t) + dither."""
    _guard(state.P)
    x = design.encoder_gain(state.P) @ (np.asarray(s, float) - state.S_hat)
    if noise_draw is not None:
        x = x + np.asarray(noise_draw, float)
    return x


def filter_gain(P, design, source, channel):
    """(K, C, innovation covariance) for the decoder at covariance P."""
    C, N = design.observation(P, channel)
    S = C @ P @ C.T + N
    K = np.linalg.solve(S, C @ P @ source.A.T).T
    return K, C, S


def kalman_update(state: FilterState, y, design, source, channel, drive=None) -> FilterState:
    """One predict step of the decoder. `drive` is a known input (B u) added to both sides."""
    K, C, S = filter_gain(state.P, design, source, channel)
    S_hat = source.A @ state.S_hat + K @ np.asarray(y, float)
    if drive is not None:
        S_hat = S_hat + drive
    P = symmetrize(source.A @ state.P @ source.A.T + source.Q - K @ S @ K.T)
    return FilterState(S_hat, P, state.t + 1)


def transmit_power(design: EncoderDesign, P) -> float:
    """Average channel input power tr(G P G^T + Omega) at covariance P."""
    _guard(P)
    G = design.encoder_gain(P)
    return float(np.trace(G @ P @ G.T) + np.trace(design.Omega))


def build_partition_encoder(partition: Partition, pi, source: SourceModel, channel,
                            cfg: SolverConfig | None = None) -> tuple[EncoderDesign, np.ndarray]:
    """Encoder sending the modes of set i on sub-channel i with power pi_i.

    Returns (design, P*). The direction is Pi^{1/2} times the partition
    indicator and the per-step power normalization plays the role of the
    large scale factor, so alpha is left unset.
    """
    pi = np.asarray(pi, dtype=float)
    h = _gains(channel)
    scen = Scenario(source, channel if isinstance(channel, DiagonalChannel)
                    else DiagonalChannel(h), max(float(pi.sum()), 1e-300))
    if not check_partition(partition, pi, scen):
        raise InfeasiblePartition(f"partition {partition.to_list()} with pi={pi.tolist()} "
                                  "fails the per-set rate condition")
    Gbar = partition.indicator(source.k)
    pi_eff = np.where(Gbar.any(axis=1), pi, 0.0)
    design = EncoderDesign(np.sqrt(pi_eff)[:, None] * Gbar, None, pi_eff, partition, None)
    out = iterate_riccati(source, scen.channel, design, cfg)
    if out.status is not RiccatiStatus.CONVERGED:
        raise ConstructionFailed(f"Riccati recursion ended with {out.status.value} "
                                 f"after {out.iterations} iterations")
    power = transmit_power(design, out.P)
    if power > pi.sum() * (1 + 1e-9) + 1e-12:
        raise ConstructionFailed(f"power {power} exceeds allocation {pi.sum()}")
    return design, out.P


def with_dither(design: EncoderDesign, Omega) -> EncoderDesign:
    return replace(design, Omega=np.asarray(Omega, float))
