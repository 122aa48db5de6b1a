"""Pulse family, synthesis, noise calibration, and matched filtering."""

import numpy as np
import pytest

from turbosync.waveform import (PulseBank, SupportError, add_awgn,
                                matched_filter, matched_filter_grid,
                                matched_filter_many, pulse_derivatives,
                                synthesize, synthesize_many)


@pytest.fixture(scope="module")
def bank():
    return PulseBank(rolloff=0.2, T=1.0, span=32, Q=8)


def closed_form_rc(t, beta, T=1.0):
    """Textbook raised-cosine pulse, valid away from |t| = T/(2 beta)."""
    t = np.asarray(t, float)
    return np.sinc(t / T) * np.cos(np.pi * beta * t / T) \
        / (1.0 - (2.0 * beta * t / T) ** 2)


def closed_form_rrc(t, beta, T=1.0):
    """Textbook root-raised-cosine, valid away from t = 0, |t| = T/(4 beta)."""
    x = np.asarray(t, float) / T
    num = np.sin(np.pi * x * (1 - beta)) + 4 * beta * x * np.cos(
        np.pi * x * (1 + beta))
    den = np.pi * x * (1 - (4 * beta * x) ** 2)
    return num / den / np.sqrt(T)


class TestPulseBank:
    def test_unit_energy_discrete(self, bank):
        m = np.arange(-bank.span * bank.Q, bank.span * bank.Q + 1)
        energy = bank.Ts * np.sum(bank.h(m * bank.Ts) ** 2)
        assert abs(energy - 1.0) < 1e-4

    def test_nyquist_zeros(self, bank):
        n = np.arange(1, bank.span + 1)
        assert np.abs(bank.g(n * 1.0)).max() < 1e-6
        assert bank.g(0.0) == pytest.approx(1.0, abs=1e-12)

    def test_origin_derivatives(self, bank):
        assert bank.g_d1(0.0) == pytest.approx(0.0, abs=1e-12)
        assert bank.g_d2(0.0) < 0.0

    def test_matches_textbook_formulas(self, bank):
        rng = np.random.default_rng(0)
        t = rng.uniform(-30, 30, 400)
        t = t[np.abs(np.abs(t) - 2.5) > 0.05]      # RC singular points
        np.testing.assert_allclose(bank.g(t), closed_form_rc(t, 0.2),
                                   atol=1e-12)
        t2 = t[(np.abs(t) > 0.05) & (np.abs(np.abs(t) - 1.25) > 0.05)]
        np.testing.assert_allclose(bank.h(t2), closed_form_rrc(t2, 0.2),
                                   atol=1e-12)

    def test_derivatives_match_finite_differences(self, bank):
        """g', g'' against central differences of g at 200 random points."""
        rng = np.random.default_rng(1)
        t = rng.uniform(-30, 30, 200)
        step = 1e-5
        fd1 = (bank.g(t + step) - bank.g(t - step)) / (2 * step)
        fd2 = (bank.g_d1(t + step) - bank.g_d1(t - step)) / (2 * step)
        np.testing.assert_allclose(bank.g_d1(t), fd1,
                                   rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(bank.g_d2(t), fd2,
                                   rtol=1e-6, atol=1e-6)

    def test_derivative_parity(self, bank):
        t = np.linspace(0.1, 20, 50)
        np.testing.assert_allclose(bank.g_d1(-t), -bank.g_d1(t), atol=1e-13)
        np.testing.assert_allclose(bank.g_d2(-t), bank.g_d2(t), atol=1e-13)

    def test_pulse_derivatives_tuple(self, bank):
        g, gd, gdd = pulse_derivatives(bank, 0.0)
        assert g == pytest.approx(1.0, abs=1e-12)
        assert gd == pytest.approx(0.0, abs=1e-12)
        assert gdd < 0

    def test_taps_equal_direct_evaluation(self, bank):
        tau = 0.2719
        toff = bank.tap_offsets * bank.Ts
        for order, ref in ((0, bank.h), (1, bank.h_d1), (2, bank.h_d2)):
            np.testing.assert_allclose(bank.taps(tau, order), ref(toff - tau),
                                       atol=1e-12)

    def test_rejects_bad_rolloff(self):
        with pytest.raises(ValueError):
            PulseBank(rolloff=0.0)
        with pytest.raises(ValueError):
            PulseBank(rolloff=1.2)


class TestSynthesize:
    def test_single_symbol_traces_pulse(self, bank):
        sig = synthesize(np.array([1.0 + 0j]), 0.0, bank, Es=1.0)
        t = sig.t0 + np.arange(sig.samples.size) * sig.Ts
        np.testing.assert_allclose(sig.samples.real, bank.h(t), atol=1e-12)

    def test_fractional_shift_property(self, bank):
        """Delaying by tau equals evaluating the tau=0 waveform at t - tau."""
        rng = np.random.default_rng(2)
        sym = rng.normal(size=6) + 1j * rng.normal(size=6)
        tau = 0.5
        sig = synthesize(sym, tau, bank, Es=1.0)
        t = sig.t0 + np.arange(sig.samples.size) * sig.Ts
        ref = np.zeros_like(sig.samples)
        for k, a in enumerate(sym):
            ref += a * bank.h(t - k * bank.T - tau)
        # agreement up to the tap-support truncation of the far pulse tails
        # (several symbols' truncated tails can stack on one sample)
        np.testing.assert_allclose(sig.samples, ref, atol=3e-3)

    def test_rejects_tau_out_of_range(self, bank):
        with pytest.raises(ValueError):
            synthesize(np.ones(4, complex), 1.5, bank)

    def test_batched_matches_single(self, bank):
        rng = np.random.default_rng(3)
        sym = rng.normal(size=(3, 10)) + 1j * rng.normal(size=(3, 10))
        many = synthesize_many(sym, 0.3, bank, Es=2.0)
        for b in range(3):
            single = synthesize(sym[b], 0.3, bank, Es=2.0)
            np.testing.assert_allclose(many[b], single.samples, atol=1e-12)


class TestAddAwgn:
    def test_deterministic_given_seed(self, bank):
        sig = synthesize(np.ones(10, complex), 0.1, bank)
        a = add_awgn(sig, 0.5, 123)
        b = add_awgn(sig, 0.5, 123)
        c = add_awgn(sig, 0.5, 124)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    def test_rejects_nonpositive_variance(self, bank):
        sig = synthesize(np.ones(4, complex), 0.0, bank)
        with pytest.raises(ValueError):
            add_awgn(sig, 0.0, 1)


class TestMatchedFilter:
    def test_noiseless_roundtrip(self, bank):
        rng = np.random.default_rng(4)
        K = 40
        sym = (rng.integers(0, 2, K) * 2 - 1 +
               1j * (rng.integers(0, 2, K) * 2 - 1)) / np.sqrt(2)
        tau = 0.37
        sig = synthesize(sym, tau, bank, Es=2.0)
        mo = matched_filter(sig, tau, bank)
        np.testing.assert_allclose(mo.y, np.sqrt(2.0) * sym, atol=1e-3)

    def test_derivative_branch_matches_gd_sum(self, bank):
        """du at the true delay equals the g'-weighted ISI sum."""
        rng = np.random.default_rng(5)
        K = 30
        sym = rng.normal(size=K) + 1j * rng.normal(size=K)
        tau = 0.21
        sig = synthesize(sym, tau, bank, Es=1.0)
        mo = matched_filter(sig, tau, bank, derivatives=1)
        lags = np.subtract.outer(np.arange(K), np.arange(K)) * bank.T
        ref = bank.g_d1(lags) @ sym.real    # du_k = sum_l Re{a_l} g'((k-l)T)
        np.testing.assert_allclose(mo.du, ref, atol=1e-3)

    def test_linearity(self, bank):
        rng = np.random.default_rng(6)
        s1 = synthesize(rng.normal(size=12) + 0j, 0.4, bank)
        s2 = synthesize(rng.normal(size=12) + 0j, 0.4, bank)
        combo = type(s1)(samples=2.0 * s1.samples + s2.samples, Ts=s1.Ts,
                         t0=s1.t0, Es=1.0, true_tau=0.4, K=12, Q=s1.Q)
        a = matched_filter(combo, 0.15, bank)
        b1 = matched_filter(s1, 0.15, bank)
        b2 = matched_filter(s2, 0.15, bank)
        np.testing.assert_allclose(a.y, 2.0 * b1.y + b2.y, atol=1e-12)

    def test_delay_covariance(self, bank):
        """Outputs depend on tau - tau_hat only."""
        rng = np.random.default_rng(7)
        sym = rng.normal(size=24) + 1j * rng.normal(size=24)
        for off in (-0.1, 0.0, 0.08, 0.25, 0.4):
            a = matched_filter(synthesize(sym, 0.5, bank), 0.5 + off, bank)
            b = matched_filter(synthesize(sym, 0.3, bank), 0.3 + off, bank)
            np.testing.assert_allclose(a.y, b.y, atol=2e-3)

    def test_grid_matches_pointwise(self, bank):
        rng = np.random.default_rng(8)
        sym = rng.normal(size=16) + 1j * rng.normal(size=16)
        sig = add_awgn(synthesize(sym, 0.6, bank), 0.2, rng)
        taus = np.array([0.1, 0.33, 0.61, 0.97])
        grid = matched_filter_grid(sig, taus, bank)
        for i, t in enumerate(taus):
            np.testing.assert_allclose(grid[i],
                                       matched_filter(sig, t, bank).y,
                                       atol=1e-12)

    def test_batched_matches_single(self, bank):
        rng = np.random.default_rng(9)
        sym = rng.normal(size=(2, 14)) + 1j * rng.normal(size=(2, 14))
        samples = synthesize_many(sym, 0.44, bank)
        y, du, dv, ddu, ddv = matched_filter_many(samples, 0.2, 14, bank)
        for b in range(2):
            single = synthesize(sym[b], 0.44, bank)
            mo = matched_filter(single, 0.2, bank, derivatives=2)
            np.testing.assert_allclose(y[b], mo.y, atol=1e-12)
            np.testing.assert_allclose(du[b], mo.du, atol=1e-12)
            np.testing.assert_allclose(ddv[b], mo.ddv, atol=1e-12)

    def test_insufficient_support_names_symbols(self, bank):
        sig = synthesize(np.ones(10, complex), 0.0, bank)
        short = type(sig)(samples=sig.samples[:200], Ts=sig.Ts, t0=sig.t0,
                          Es=1.0, true_tau=0.0, K=10, Q=sig.Q)
        with pytest.raises(SupportError):
            matched_filter(short, 0.0, bank)


class TestNoiseCalibration:
    def test_mf_noise_variance_within_3pct(self, bank):
        """Per-dimension MF output noise variance equals sigma2."""
        sigma2 = 0.6
        rng = np.random.default_rng(10)
        zeros = np.zeros((24, 420), dtype=complex)
        us = []
        for row in range(24):
            sig = add_awgn(synthesize(zeros[row], 0.2, bank), sigma2, rng)
            mo = matched_filter(sig, 0.2, bank, derivatives=1)
            us.append(np.concatenate([mo.u, mo.v]))
        u = np.concatenate(us)
        assert abs(u.var() / sigma2 - 1.0) < 0.03

    def test_u_and_du_uncorrelated(self, bank):
        sigma2 = 1.0
        rng = np.random.default_rng(11)
        uu, dd = [], []
        for _ in range(20):
            sig = add_awgn(synthesize(np.zeros(400, complex), 0.5, bank),
                           sigma2, rng)
            mo = matched_filter(sig, 0.5, bank, derivatives=1)
            uu.append(mo.u)
            dd.append(mo.du)
        u = np.concatenate(uu)
        du = np.concatenate(dd)
        n = u.size
        # cross-moment should vanish; 3-sigma band for the sample estimate
        cross = np.mean(u * du)
        bound = 3.0 * np.sqrt(sigma2 * sigma2 * -bank.g_d2(0.0) / n)
        assert abs(cross) < bound
