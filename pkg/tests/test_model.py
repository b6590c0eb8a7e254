import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_beams, random_scenario, scalar_pair
from ibcsim.model import (BeamformerSet, ChannelSet, Dimensions, ModelError, all_mse,
                          all_sinr, compute_sinr, mmse_receiver, mmse_receivers,
                          stream_mse, stream_rate, user_rates)


def scalar_channels(h=1.0, noise=1.0):
    return ChannelSet(np.full((1, 1, 1, 1), h, complex), [noise], [0])


def scalar_beams(m=1.0, w=1.0):
    return BeamformerSet(np.array([[m]], complex), np.array([[w]], complex), np.array([0]), np.array([0]))


def brute_force_sinr(H, serving, owner, tx, rx, noise, k):
    """Loop-by-loop evaluation of desired over interference-plus-filtered-noise."""
    u = owner[k]
    w = rx[k]
    num = abs(np.vdot(w, H[serving[u], u] @ tx[k])) ** 2
    den = noise[u] * np.vdot(w, w).real
    for j in range(len(owner)):
        if j != k:
            den += abs(np.vdot(w, H[serving[owner[j]], u] @ tx[j])) ** 2
    return num / den


def test_dimensions_validate_streams():
    with pytest.raises(ModelError):
        Dimensions.regular(2, 1, 2, 1, streams=2)
    d = Dimensions.regular(3, 2, 4, 2)
    assert d.num_rx == 6 and d.num_streams == 6
    assert list(d.served_by(1)) == [2, 3]


def test_channelset_rejects_bad_input():
    with pytest.raises(ModelError):
        ChannelSet(np.ones((1, 1, 1, 1)), [0.0], [0])
    with pytest.raises(ModelError):
        ChannelSet(np.full((1, 1, 1, 1), np.nan), [1.0], [0])
    with pytest.raises(ModelError):
        ChannelSet(np.ones((1, 1, 1, 1)), [1.0], [3])


def test_sinr_single_link():
    assert compute_sinr(scalar_channels(), scalar_beams(), (0, 0)) == pytest.approx(1.0)


def test_sinr_zero_precoder():
    assert compute_sinr(scalar_channels(), scalar_beams(m=0.0), 0) == 0.0


def test_sinr_zero_receiver_is_an_error():
    with pytest.raises(ModelError):
        compute_sinr(scalar_channels(), scalar_beams(w=0.0), 0)


def test_sinr_two_scalar_links():
    sc = scalar_pair(1.0, 1.0, 0.5, 0.0, noise=0.1)
    beams = BeamformerSet(np.ones((2, 1), complex), np.ones((2, 1), complex),
                          np.array([0, 1]), np.array([0, 0]))
    expected = 1.0 / (0.5 ** 2 + 0.1)
    assert compute_sinr(sc.channels, beams, (0, 0)) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(2.8571, abs=1e-4)


def test_sinr_matches_brute_force():
    sc = random_scenario(3, streams=2)
    beams = random_beams(sc, 4)
    ch = sc.channels
    batch = all_sinr(ch, beams)
    for k in range(beams.num_streams):
        ref = brute_force_sinr(ch.H, ch.serving, beams.owner, beams.tx, beams.rx, ch.noise_power, k)
        assert batch[k] == pytest.approx(ref, rel=1e-12)
        assert compute_sinr(ch, beams, k) == pytest.approx(ref, rel=1e-12)


def test_dimension_mismatch():
    beams = BeamformerSet(np.ones((1, 2), complex), np.ones((1, 1), complex), np.array([0]), np.array([0]))
    with pytest.raises(ModelError):
        compute_sinr(scalar_channels(), beams, 0)


@pytest.mark.parametrize("sinr, rate", [(0.0, 0.0), (1.0, 1.0), (3.0, 2.0)])
def test_stream_rate(sinr, rate):
    assert stream_rate(sinr) == pytest.approx(rate)


def test_stream_rate_rejects_negative():
    with pytest.raises(ModelError):
        stream_rate(-0.1)


def test_user_rate_sums_streams():
    r = user_rates(np.array([1.0, 0.5, 2.0]), np.array([0, 0, 1]), 2)
    np.testing.assert_allclose(r, [1.5, 2.0])


def test_mmse_scalar():
    w = mmse_receiver(scalar_channels(), scalar_beams(), (0, 0))
    np.testing.assert_allclose(w, [0.5])


def test_mmse_identity_channel_aligns_with_stream():
    H = np.eye(2, dtype=complex)[None, None]
    ch = ChannelSet(H, [1.0], [0])
    beams = BeamformerSet(np.array([[1, 0]], complex), np.zeros((1, 2), complex), np.array([0]), np.array([0]))
    w = mmse_receiver(ch, beams, 0)
    assert abs(w[1]) < 1e-15 and abs(w[0]) > 0


def test_mse_scalar_examples():
    ch = scalar_channels()
    assert stream_mse(ch, scalar_beams(w=0.5), 0) == pytest.approx(0.5)
    assert stream_mse(ch, scalar_beams(m=0.0, w=1.0), 0) == pytest.approx(2.0)


def test_mmse_dominates_random_receivers():
    sc = random_scenario(11, tx_antennas=3, rx_antennas=3)
    beams = random_beams(sc, 12)
    beams.rx = mmse_receivers(sc.channels, beams)
    rng = np.random.default_rng(13)
    for k in range(beams.num_streams):
        best = compute_sinr(sc.channels, beams, k)
        trial = beams.copy()
        for _ in range(1000):
            v = rng.standard_normal(3) + 1j * rng.standard_normal(3)
            trial.rx[k] = v / np.linalg.norm(v)
            assert compute_sinr(sc.channels, trial, k) <= best * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1),
       re=st.floats(-1e3, 1e3).filter(lambda x: abs(x) > 1e-3),
       im=st.floats(-1e3, 1e3))
def test_sinr_invariant_to_receiver_scaling(seed, re, im):
    sc = random_scenario(seed)
    beams = random_beams(sc, seed + 1)
    scaled = beams.copy()
    scaled.rx = scaled.rx * complex(re, im)
    np.testing.assert_allclose(all_sinr(sc.channels, scaled), all_sinr(sc.channels, beams), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), streams=st.sampled_from([1, 2]))
def test_mmse_identity_property(seed, streams):
    sc = random_scenario(seed, streams=streams)
    beams = random_beams(sc, seed + 1)
    beams.rx = mmse_receivers(sc.channels, beams)
    e = all_mse(sc.channels, beams)
    gamma = all_sinr(sc.channels, beams)
    np.testing.assert_allclose(e, 1.0 / (1.0 + gamma), rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), alpha=st.floats(0.0, 0.99))
def test_less_interference_raises_sinr(seed, alpha):
    sc = random_scenario(seed)
    beams = random_beams(sc, seed + 1)
    k = 0
    before = compute_sinr(sc.channels, beams, k)
    quieter = beams.copy()
    quieter.tx[1:] *= alpha
    assert compute_sinr(sc.channels, quieter, k) > before


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1e12))
def test_stream_rate_nonnegative(g):
    r = stream_rate(g)
    assert r >= 0.0
    assert (r == 0.0) == (g == 0.0)
