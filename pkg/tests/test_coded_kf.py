import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codedkf.coded_kf import (EncoderDesign, FilterState, build_partition_encoder, filter_gain,
                              initial_state, innovation_encode, kalman_update, transmit_power,
                              with_dither)
from codedkf.errors import IllConditioned, InfeasiblePartition, ShapeError
from codedkf.linalg import is_psd, iterate_riccati
from codedkf.models import DiagonalChannel, SourceModel
from codedkf.stability import Partition, best_assignment, min_power_for_set

from conftest import random_spd, scalar_setup


def test_zero_innovation_sends_nothing():
    d = EncoderDesign.fixed([[0.7, -1.0]])
    st_ = FilterState(np.array([1.0, 2.0]), np.eye(2))
    assert np.allclose(innovation_encode(d, [1.0, 2.0], st_), 0.0)


def test_scalar_encoder_arithmetic():
    P = np.array([[4.0]])
    d = EncoderDesign.from_gamma_tilde([[2.0]], P)
    st_ = FilterState(np.array([0.0]), P)
    assert innovation_encode(d, [1.0], st_)[0] == pytest.approx(0.5)
    assert innovation_encode(EncoderDesign.fixed([[0.5]]), [1.0], st_)[0] == pytest.approx(0.5)
    with pytest.raises(IllConditioned):
        innovation_encode(d, [1.0], FilterState(np.array([0.0]), np.array([[0.0]])))


def test_dither_moments():
    rng = np.random.default_rng(5)
    Om = np.array([[0.5, 0.1], [0.1, 0.3]])
    d = EncoderDesign.fixed(np.ones((2, 2)), Om)
    st_ = FilterState(np.zeros(2), np.eye(2))
    N = 100_000
    draws = rng.multivariate_normal(np.zeros(2), Om, size=N)
    X = np.array([innovation_encode(d, [0.0, 0.0], st_, m) for m in draws[:2000]])
    assert np.allclose(X, draws[:2000])
    sd = np.sqrt(np.diag(Om))
    assert np.all(np.abs(draws.mean(axis=0)) <= 4 * sd / np.sqrt(N))
    assert np.allclose(np.cov(draws.T), Om, rtol=0.05, atol=0.05 * 0.1)


def test_open_loop_update():
    src = SourceModel.diagonal([2.0, -3.0], random_spd(np.random.default_rng(0), 2))
    d = EncoderDesign.fixed(np.zeros((2, 2)))
    st_ = FilterState(np.array([1.0, 1.0]), np.eye(2))
    nxt = kalman_update(st_, [5.0, -5.0], d, src, DiagonalChannel([1.0, 1.0]))
    assert np.allclose(nxt.S_hat, src.A @ st_.S_hat)
    assert np.allclose(nxt.P, src.A @ st_.P @ src.A.T + src.Q)
    assert nxt.t == 1


def test_fixed_point_persistence_and_gain_formula():
    scen, d = scalar_setup()
    src, ch = scen.source, scen.channel
    P = np.array([[3.0]])
    nxt = kalman_update(FilterState(np.zeros(1), P), [0.0], d, src, ch)
    assert nxt.P[0, 0] == pytest.approx(3.0, rel=1e-12)
    K, _, _ = filter_gain(P, d, src, ch)
    Gt = d.gamma_tilde(P)
    H = ch.H
    ref = src.A @ Gt.T @ H.T @ np.linalg.inv(H @ Gt @ np.linalg.inv(P) @ Gt.T @ H.T + np.eye(1))
    assert np.allclose(K, ref)
    assert Gt[0, 0] ** 2 / P[0, 0] == pytest.approx(5.0)


def test_transmit_power_examples():
    P = np.eye(2)
    assert transmit_power(EncoderDesign.fixed(np.zeros((2, 2))), P) == 0.0
    assert transmit_power(EncoderDesign.fixed(np.zeros((2, 2)), np.diag([0.5, 0.5])), P) == pytest.approx(1.0)
    _, d = scalar_setup()
    assert transmit_power(d, np.array([[3.0]])) == pytest.approx(5.0)
    assert transmit_power(d, np.array([[17.0]])) == pytest.approx(5.0)


def test_build_scalar():
    src = SourceModel.diagonal([2.0])
    d, P = build_partition_encoder(Partition(((0,),)), [5.0], src, DiagonalChannel([1.0]))
    assert P[0, 0] == pytest.approx(3.0, rel=1e-8)
    assert transmit_power(d, P) <= 5.0 * (1 + 1e-9)
    assert d.Omega.sum() == 0.0 and d.partition.sets == ((0,),)


def test_build_two_modes():
    src = SourceModel.diagonal([2.0, 3.0])
    d, P = build_partition_encoder(Partition(((0,), (1,))), [3.5, 8.5], src, DiagonalChannel([1.0, 1.0]))
    assert transmit_power(d, P) <= 12.0 * (1 + 1e-9)
    # each set behaves like its own scalar loop: P_j = q(1+s)/(1+s-a^2)
    assert np.allclose(np.diag(P), [4.5 / 0.5, 9.5 / 0.5], rtol=1e-8)


def test_build_infeasible():
    src = SourceModel.diagonal([2.0, 3.0])
    with pytest.raises(InfeasiblePartition):
        build_partition_encoder(Partition(((), (0, 1))), [0.0, 10.0], src, DiagonalChannel([1.0, 1.0]))


def test_design_roundtrip_and_shape_checks():
    d = EncoderDesign([[1.0, 0.0], [0.0, 2.0]], np.eye(2) * 0.1, [1.0, 2.0], Partition(((0,), (1,))))
    e = EncoderDesign.from_dict(d.to_dict())
    assert np.array_equal(e.gain, d.gain) and np.array_equal(e.pi, d.pi) and e.partition == d.partition
    with pytest.raises(ShapeError):
        EncoderDesign([[1.0]], np.eye(2))
    with pytest.raises(ShapeError):
        EncoderDesign([[1.0]], [[-1.0]])
    with pytest.raises(ShapeError):
        d.check_dims(SourceModel.diagonal([2.0]), DiagonalChannel([1.0, 1.0]))
    assert np.array_equal(with_dither(d, np.zeros((2, 2))).Omega, np.zeros((2, 2)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 3), n=st.integers(1, 3),
       margin=st.floats(1.05, 3.0), diag_q=st.booleans())
def test_constructed_designs_respect_power(seed, k, n, margin, diag_q):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(1.1, 2.5, size=k) * rng.choice([-1, 1], size=k)
    h = np.sort(rng.uniform(0.3, 2.0, size=n))[::-1]
    Q = np.diag(rng.uniform(0.5, 2.0, size=k)) if diag_q else random_spd(rng, k)
    src = SourceModel(np.diag(lam), Q)
    _, assign = best_assignment(np.abs(lam), h)
    part = Partition.from_assignment(assign, n)
    pi = np.array([min_power_for_set(S, h[i], np.abs(lam)) for i, S in enumerate(part.sets)]) * margin
    d, P = build_partition_encoder(part, pi, src, DiagonalChannel(h))
    Gt = d.gamma_tilde(P)
    cov = Gt @ np.linalg.solve(P, Gt.T)
    assert np.all(np.diag(cov) <= pi * (1 + 1e-9))
    assert transmit_power(d, P) <= pi.sum() * (1 + 1e-9)
    if diag_q:
        # independent process noise keeps sub-channel inputs uncorrelated
        assert is_psd(np.diag(pi) - cov, slack=1e-8 * max(1.0, pi.max()), sym_tol=1e-6)
    assert is_psd(P)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(1.1, 4.0), h=st.floats(0.2, 3.0), g1=st.floats(0.1, 5.0), ratio=st.floats(1.01, 10.0))
def test_more_gain_never_hurts_scalar(a, h, g1, ratio):
    src, ch = SourceModel.diagonal([a]), DiagonalChannel([h])
    o1 = iterate_riccati(src, ch, EncoderDesign.fixed([[g1]]))
    o2 = iterate_riccati(src, ch, EncoderDesign.fixed([[g1 * ratio]]))
    if o1.converged and o2.converged:
        assert o2.P[0, 0] <= o1.P[0, 0] + 1e-8 * max(1.0, o1.P[0, 0])


def test_initial_state():
    src = SourceModel.diagonal([2.0, 3.0])
    s = initial_state(src)
    assert np.array_equal(s.S_hat, [0.0, 0.0]) and np.array_equal(s.P, src.Q) and s.t == 0
