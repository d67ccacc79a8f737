import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codedkf.errors import AssumptionViolation, ModelError
from codedkf.models import (ChannelModel, DiagonalChannel, Scenario, SourceModel,
                            canonicalize_source, diagonalize_channel, validate_assumptions)
from codedkf.stability import shannon_capacity

from conftest import random_spd


def test_diagonalize_examples():
    ch = diagonalize_channel(ChannelModel(np.eye(2), np.eye(2)))
    assert np.allclose(ch.gains, [1, 1])
    assert np.allclose(np.abs(ch.input_transform), np.eye(2))
    assert np.allclose(diagonalize_channel(ChannelModel(np.diag([3.0, 1.0]), np.eye(2))).gains, [3, 1])
    assert np.allclose(diagonalize_channel(ChannelModel([[0, 2.0], [1.0, 0]], np.eye(2))).gains, [2, 1])
    assert np.allclose(diagonalize_channel(ChannelModel(np.diag([1.0, 3.0]), np.eye(2))).gains, [3, 1])


def test_diagonalize_rejects_bad_noise():
    with pytest.raises(ModelError):
        diagonalize_channel(ChannelModel(np.eye(2), np.diag([1.0, -1.0])))


def test_tiny_gain_clamped():
    ch = DiagonalChannel([1.0, 1e-13])
    assert ch.gains[1] == 0.0 and list(ch.usable) == [True, False]
    with pytest.raises(ModelError):
        DiagonalChannel([0.5, 1.0])
    assert list(DiagonalChannel.from_gains([0.5, 2.0]).gains) == [2.0, 0.5]


def test_canonicalize_examples():
    src, T = canonicalize_source(np.diag([2.0, 3.0]), np.eye(2))
    assert np.array_equal(T, np.eye(2)) and list(np.diag(src.A)) == [2.0, 3.0]
    A = np.array([[0.0, 1.0], [-6.0, 5.0]])
    src, T = canonicalize_source(A, np.eye(2))
    assert np.allclose(np.diag(src.A), [3.0, 2.0])
    assert np.allclose(T @ A @ np.linalg.inv(T), src.A, atol=1e-12)
    with pytest.raises(AssumptionViolation):
        canonicalize_source(np.array([[2.0, 1.0], [0.0, 2.0]]), np.eye(2))


def test_canonicalize_rejections():
    with pytest.raises(AssumptionViolation, match="complex"):
        canonicalize_source(np.array([[0.0, -2.0], [2.0, 0.0]]), np.eye(2))
    with pytest.raises(AssumptionViolation):
        canonicalize_source(np.diag([2.0, 0.5]), np.eye(2))
    with pytest.raises(AssumptionViolation):
        canonicalize_source(np.diag([2.0, -1.0]), np.eye(2))
    with pytest.raises(ModelError):
        canonicalize_source(np.diag([2.0, 3.0]), np.diag([1.0, 0.0]))


def test_strip_stable_warns_and_projects():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        src, T = canonicalize_source(np.diag([2.0, 0.5, 3.0]), np.eye(3), strip_stable=True)
    assert len(w) == 1
    assert list(np.diag(src.A)) == [2.0, 3.0]
    assert T.shape == (2, 3)


def test_validate_assumptions():
    ch = DiagonalChannel([1.0])
    assert validate_assumptions(Scenario(SourceModel.diagonal([2.0, 3.0]), ch, 1.0)) == []
    bad = validate_assumptions(Scenario(SourceModel.diagonal([2.0, 0.5]), ch, 1.0))
    assert any("not strictly unstable" in m for m in bad)
    rep = validate_assumptions(Scenario(SourceModel.diagonal([2.0, 2.0]), ch, 1.0))
    assert any("repeated eigenvalues" in m for m in rep)
    with pytest.raises(ModelError):
        Scenario(SourceModel.diagonal([2.0]), ch, 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 4))
def test_canonicalize_preserves_spectrum(seed, k):
    rng = np.random.default_rng(seed)
    while True:
        lam = rng.uniform(1.1, 4.0, size=k) * rng.choice([-1, 1], size=k)
        if k == 1 or np.min(np.diff(np.sort(lam))) > 0.05:
            break
    V = rng.normal(size=(k, k)) + 2 * np.eye(k)
    A = V @ np.diag(lam) @ np.linalg.inv(V)
    Q = random_spd(rng, k)
    src, T = canonicalize_source(A, Q)
    assert np.allclose(np.sort(np.diag(src.A)), np.sort(lam), rtol=1e-9, atol=1e-9)
    assert np.all(np.linalg.eigvalsh(src.Q) > 0)
    assert np.allclose(T @ A @ np.linalg.inv(T), src.A, atol=1e-8 * np.max(np.abs(lam)) * np.linalg.cond(T))


def _raw_channel(rng, m, n):
    return ChannelModel(rng.normal(size=(m, n)), random_spd(rng, m))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), p=st.floats(0.01, 100.0))
def test_capacity_invariant_under_diagonalization(seed, n, p):
    rng = np.random.default_rng(seed)
    raw = _raw_channel(rng, n, n)
    ch = diagonalize_channel(raw)
    C, alloc = shannon_capacity(ch, p)
    # input covariance V^T diag(alloc) V on the raw channel reaches the same rate
    V = ch.input_transform
    Pi = V.T @ np.diag(alloc) @ V
    raw_rate = 0.5 * np.linalg.slogdet(np.eye(n) + np.linalg.solve(raw.R, raw.H @ Pi @ raw.H.T))[1]
    assert raw_rate == pytest.approx(C, abs=1e-9)
    # an extra orthogonal rotation of input and output leaves the gains unchanged
    U, _ = np.linalg.qr(rng.normal(size=(n, n)))
    W, _ = np.linalg.qr(rng.normal(size=(n, n)))
    rot = diagonalize_channel(ChannelModel(U @ raw.H @ W, U @ raw.R @ U.T))
    assert shannon_capacity(rot, p)[0] == pytest.approx(C, abs=1e-9)


def test_channel_round_trip_moments():
    rng = np.random.default_rng(11)
    raw = _raw_channel(rng, 3, 3)
    ch = diagonalize_channel(raw)
    N = 20000
    X = rng.normal(size=(N, 3)) * [1.0, 2.0, 0.5]
    Z = rng.multivariate_normal(np.zeros(3), raw.R, size=N)
    Ybar = (X @ raw.H.T + Z) @ ch.output_transform.T
    Xbar = X @ ch.input_transform.T
    resid = Ybar - Xbar * ch.gains
    # equivalent diagonal channel: unit white noise, independent of the input
    assert np.allclose(np.cov(resid.T), np.eye(3), atol=0.05)
    cross = resid.T @ Xbar / N
    assert np.max(np.abs(cross)) < 0.05 * np.max(np.abs(Xbar.T @ Xbar / N))
