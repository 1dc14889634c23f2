import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import central_diff, rel_err
from smsc import autodiff as ad
from smsc.autodiff import Tensor
from smsc.channel import (
    ChannelConfig, ChannelRealization, equalize, feature_budget, noise_sigma, power_normalize,
    sample_noise, sample_rician, sample_rician_many, shared_budget, to_complex, to_interleaved, transmit,
)
from smsc.errors import ConfigError, ContractError, DeepFadeError, DegenerateInputError, ShapeError


def budget_oracle(tw, snr_db, n, bits=64):
    v = tw * math.log2(1 + 10 ** (snr_db / 10))
    return min(int(v // bits), n)


def test_interleave_round_trip():
    z = np.array([[1 + 2j, -3 + 0.5j]])
    assert to_interleaved(z).tolist() == [[1.0, 2.0, -3.0, 0.5]]
    np.testing.assert_array_equal(to_complex(to_interleaved(z)), z)


# ---------------------------------------------------------------- power control


def test_power_normalize_single_unit_symbol():
    np.testing.assert_allclose(power_normalize(to_interleaved([1 + 0j]), 1.0).data, [[1.0, 0.0]])


def test_power_normalize_fixed_point():
    z = to_interleaved(np.full(4, 1 + 1j) / math.sqrt(2))  # already norm sqrt(P*B) for P=1, B=4
    np.testing.assert_allclose(power_normalize(z, 1.0).data, z[None], rtol=1e-15)


def test_power_normalize_exact_on_random_vectors():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        b = int(rng.integers(1, 101))
        p = float(rng.uniform(0.1, 10))
        z = power_normalize(rng.normal(size=(1, 2 * b)) * rng.uniform(1e-3, 1e3), p).data
        assert abs((z**2).sum() - p * b) / (p * b) < 1e-12


def test_power_normalize_preserves_direction():
    x = np.random.default_rng(1).normal(size=(3, 8))
    z = power_normalize(x, 2.0).data
    cos = (z * x).sum(axis=1) / (np.linalg.norm(z, axis=1) * np.linalg.norm(x, axis=1))
    np.testing.assert_allclose(cos, 1.0, rtol=1e-12)


def test_power_normalize_zero_vector():
    with pytest.raises(DegenerateInputError):
        power_normalize(np.zeros((1, 4)), 1.0)


def test_power_normalize_empty():
    with pytest.raises(ContractError):
        power_normalize(np.zeros((2, 0)), 1.0)


# ---------------------------------------------------------------- fading and noise


def test_rician_statistics():
    h = sample_rician_many(2.0, 100_000, 0)
    assert abs(h.mean() - math.sqrt(2 / 3)) / math.sqrt(2 / 3) < 0.01
    assert abs(h.mean().imag) < 0.01
    assert abs(np.mean(np.abs(h - h.mean()) ** 2) - 1 / 3) / (1 / 3) < 0.02


def test_rayleigh_limit():
    h = sample_rician_many(0.0, 100_000, 1)
    assert abs(h.mean()) < 0.01
    assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 0.02


def test_rician_deterministic_in_seed():
    assert sample_rician(2.0, 42) == sample_rician(2.0, 42)
    assert sample_rician(2.0, 42) != sample_rician(2.0, 43)


def test_rician_negative_factor():
    with pytest.raises(ContractError):
        sample_rician(-1.0, 0)


@pytest.mark.parametrize("snr_db,expected", [(0, 1.0), (10, 0.1), (-6, 10**0.6)])
def test_noise_sigma(snr_db, expected):
    assert noise_sigma(snr_db, 1.0) == pytest.approx(expected, rel=1e-12)


def test_noise_sigma_at_minus_six():
    assert noise_sigma(-6, 1.0) == pytest.approx(3.981, abs=1e-3)


@pytest.mark.parametrize("snr_db", [-6.0, 0.0, 8.0])
def test_noise_per_component_variance(snr_db):
    n = sample_noise((1000, 200), snr_db, 1.0, 5)
    target = noise_sigma(snr_db, 1.0) / 2
    assert abs(n[:, 0::2].var() - target) / target < 0.02
    assert abs(n[:, 1::2].var() - target) / target < 0.02


# ---------------------------------------------------------------- transmit and equalize


def test_transmit_identity_channel():
    z = np.random.default_rng(0).normal(size=(2, 6))
    np.testing.assert_array_equal(transmit(z, ChannelRealization(1 + 0j, np.zeros((2, 6)))).data, z)


def test_transmit_zero_signal_gives_noise():
    n = np.random.default_rng(1).normal(size=(1, 4))
    np.testing.assert_array_equal(transmit(np.zeros((1, 4)), ChannelRealization(0.3 - 2j, n)).data, n)


def test_transmit_hand_arithmetic():
    out = transmit(to_interleaved([1 + 1j]), ChannelRealization(2 + 0j, np.zeros(2)))
    np.testing.assert_allclose(to_complex(out), [[2 + 2j]])


def test_transmit_length_mismatch():
    with pytest.raises(ShapeError):
        transmit(np.zeros((1, 4)), ChannelRealization(1 + 0j, np.zeros((1, 6))))


def test_equalize_hand_arithmetic():
    np.testing.assert_allclose(to_complex(equalize(to_interleaved([1 + 0j]), 0.5)), [[2 + 0j]])


def test_equalize_identity():
    z = np.random.default_rng(2).normal(size=(2, 4))
    np.testing.assert_array_equal(equalize(z, 1.0).data, z)


def test_equalize_deep_fade():
    with pytest.raises(DeepFadeError):
        equalize(np.ones((1, 2)), 1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_noiseless_round_trip(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(3, 10))
    h = sample_rician(2.0, rng)
    if abs(h) < 1e-3:
        return
    out = equalize(transmit(z, ChannelRealization(h, np.zeros_like(z))), h).data
    np.testing.assert_allclose(out, z, rtol=1e-12, atol=1e-12)


def test_per_row_fading():
    z = np.ones((2, 2))
    out = to_complex(transmit(z, ChannelRealization(np.array([1j, 2.0]), np.zeros((2, 2)))))
    np.testing.assert_allclose(out, [[-1 + 1j], [2 + 2j]])


def test_transmit_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    real = ChannelRealization(complex(rng.normal(), rng.normal()), rng.normal(size=(2, 6)))
    w = rng.normal(size=(2, 6))

    def f(z):
        return ad.sum(ad.mul(ad.square(equalize(transmit(power_normalize(z, 1.0), real), real.h)), w))

    x = rng.normal(size=(2, 6))
    t = Tensor(x, requires_grad=True)
    ad.backward(f(t))
    probe = x.copy()
    assert rel_err(t.grad, central_diff(lambda: f(probe).item(), probe)) < 1e-4


# ---------------------------------------------------------------- feature budget


def test_budget_worked_examples():
    cfg = ChannelConfig(bandwidth=6400)
    assert feature_budget(cfg, 1000, 0.0) == 100
    assert feature_budget(cfg, 1000, -6.0) == 32
    assert feature_budget(cfg, 1000, 10 * math.log10(3)) == 200
    assert feature_budget(cfg, 32, 10 * math.log10(3)) == 32


@pytest.mark.parametrize("tw", [1600.0, 2048.0, 6400.0])
def test_budget_matches_formula(tw):
    cfg = ChannelConfig(bandwidth=tw)
    for snr in range(-10, 21):
        assert feature_budget(cfg, 32, snr) == budget_oracle(tw, snr, 32)


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 30), st.floats(-20, 30), st.floats(1, 1e4), st.integers(1, 200))
def test_budget_monotone(s1, s2, tw, n):
    lo, hi = sorted((s1, s2))
    cfg = ChannelConfig(bandwidth=tw)
    assert 0 <= feature_budget(cfg, n, lo) <= feature_budget(cfg, n, hi) <= n
    assert feature_budget(cfg, n, lo) <= feature_budget(ChannelConfig(bandwidth=2 * tw), n, lo)


def test_budget_zero_at_very_low_snr():
    assert feature_budget(ChannelConfig(bandwidth=64), 32, -30) == 0


def test_budget_rejects_empty_feature_set():
    with pytest.raises(ContractError):
        feature_budget(ChannelConfig(), 0, 0.0)


def test_shared_budget_splits_slot():
    cfg = ChannelConfig(bandwidth=6400)  # 0 dB: 100 features in the slot
    shares = [shared_budget(cfg, 64, 0.0, 3, i) for i in range(3)]
    assert shares == [34, 33, 33]
    assert shared_budget(cfg, 32, 0.0, 1, 0) == feature_budget(cfg, 32, 0.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        ChannelConfig(avg_power=0)
    with pytest.raises(ConfigError):
        ChannelConfig(bits_per_feature=0)
