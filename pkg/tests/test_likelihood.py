"""Factorized code-aided LLF: values, derivatives, and marginal laws."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import chisquare

from turbosync.constellation import (AXIS_I, LlrFrame, build_constellation,
                                     symbol_apps)
from turbosync.estimator import LlfEngine
from turbosync.likelihood import (ca_llf, log_f, log_f_d1, log_f_d2,
                                  log_f_derivs, log_f_values, make_context,
                                  nda_context, nda_llf)
from turbosync.waveform import (PulseBank, add_awgn, matched_filter,
                                synthesize)


@pytest.fixture(scope="module")
def bank():
    return PulseBank(rolloff=0.2, T=1.0, span=32, Q=8)


class TestLogF:
    def test_qpsk_zero_llr_at_origin(self):
        """Single-amplitude case: ln F(0) = -rho d^2 (cosh(0) = 1)."""
        spec = build_constellation(1)
        ctx = make_context(LlrFrame.zeros(4, 1), spec, Es=1.0, sigma2=0.25)
        np.testing.assert_allclose(log_f(ctx, 0, AXIS_I, 0.0),
                                   -ctx.rho * spec.d ** 2, atol=1e-14)

    def test_naive_sum_oracle_16qam(self):
        spec = build_constellation(2)
        rng = np.random.default_rng(0)
        frame = LlrFrame(rng.normal(0, 2, (30, 4)))
        ctx = make_context(frame, spec, Es=1.0, sigma2=0.4)
        A = spec.amplitudes
        for _ in range(150):
            k = int(rng.integers(0, 30))
            axis = int(rng.integers(0, 2))
            x = float(rng.normal(0, 1.5))
            th = ctx.coeffs.theta[axis][k]
            ls = ctx.coeffs.sign_llr[axis][k]
            direct = np.log(np.sum(th * np.exp(-ctx.rho * A ** 2)
                                   * np.cosh(ctx.scale * A * x + ls / 2)))
            np.testing.assert_allclose(log_f(ctx, k, axis, x), direct,
                                       rtol=1e-12)

    def test_llr_sign_flip_symmetry_qpsk(self):
        """F with priors -L at -x equals F with priors L at x."""
        spec = build_constellation(1)
        rng = np.random.default_rng(1)
        llrs = rng.normal(0, 2, (6, 2))
        ctx_p = make_context(LlrFrame(llrs), spec, 1.0, 0.3)
        ctx_m = make_context(LlrFrame(-llrs), spec, 1.0, 0.3)
        x = rng.normal(0, 1, 6)
        np.testing.assert_allclose(log_f_values(ctx_p, x, AXIS_I),
                                   log_f_values(ctx_m, -x, AXIS_I), atol=1e-13)

    def test_overflow_freedom(self):
        spec = build_constellation(3)
        frame = LlrFrame(np.full((4, 6), 50.0))
        ctx = make_context(frame, spec, Es=1.0, sigma2=1.0 / (2.0 * 1e4))
        for x in (-1e6, -10.0, 0.0, 17.0, 1e6):
            assert np.isfinite(log_f(ctx, 0, AXIS_I, x))
            assert np.isfinite(log_f_d1(ctx, 0, AXIS_I, x))
            assert np.isfinite(log_f_d2(ctx, 0, AXIS_I, x))


class TestLogFDerivatives:
    def test_qpsk_analytic_tanh(self):
        spec = build_constellation(1)
        ctx = make_context(LlrFrame.zeros(3, 1), spec, Es=2.0, sigma2=0.5)
        c = ctx.scale * spec.d
        for x in (-2.0, -0.3, 0.0, 1.7):
            np.testing.assert_allclose(log_f_d1(ctx, 0, AXIS_I, x),
                                       c * np.tanh(c * x), rtol=1e-12)

    def test_zero_at_origin(self):
        spec = build_constellation(2)
        ctx = make_context(LlrFrame.zeros(3, 2), spec, 1.0, 0.3)
        assert log_f_d1(ctx, 0, AXIS_I, 0.0) == pytest.approx(0.0, abs=1e-14)

    def test_derivative_bound(self):
        spec = build_constellation(2)
        rng = np.random.default_rng(2)
        ctx = make_context(LlrFrame(rng.normal(0, 3, (20, 4))), spec, 1.0, 0.1)
        cap = ctx.scale * spec.amplitudes.max()
        x = rng.normal(0, 5, 20)
        _, d1, _ = log_f_derivs(ctx, x, AXIS_I)
        assert np.all(np.abs(d1) <= cap + 1e-12)

    def test_finite_difference_oracle(self):
        spec = build_constellation(2)
        rng = np.random.default_rng(3)
        frame = LlrFrame(rng.normal(0, 2, (10, 4)))
        ctx = make_context(frame, spec, Es=1.0, sigma2=0.3)
        eps = 1e-6
        for _ in range(100):
            k = int(rng.integers(0, 10))
            axis = int(rng.integers(0, 2))
            x = float(rng.normal(0, 1.2))
            fd1 = (log_f(ctx, k, axis, x + eps)
                   - log_f(ctx, k, axis, x - eps)) / (2 * eps)
            fd2 = (log_f_d1(ctx, k, axis, x + eps)
                   - log_f_d1(ctx, k, axis, x - eps)) / (2 * eps)
            assert log_f_d1(ctx, k, axis, x) == pytest.approx(fd1, rel=1e-5,
                                                              abs=1e-7)
            assert log_f_d2(ctx, k, axis, x) == pytest.approx(fd2, rel=1e-5,
                                                              abs=1e-7)


class TestCaLlf:
    def test_zero_frame_equals_nda(self, bank):
        spec = build_constellation(2)
        rng = np.random.default_rng(4)
        K = 40
        sym = spec.points[rng.integers(0, 16, K)]
        sig = add_awgn(synthesize(sym, 0.3, bank), 0.2, rng)
        mo = matched_filter(sig, 0.3, bank)
        ctx_zero = make_context(LlrFrame.zeros(K, 2), spec, 1.0, 0.2)
        ctx_nda = nda_context(K, spec, 1.0, 0.2)
        assert ca_llf(ctx_zero, mo) == nda_llf(ctx_nda, mo)

    def test_single_symbol_hand_formula(self, bank):
        """One QPSK symbol, zero LLRs: two log-cosh terms minus 2 rho d^2."""
        spec = build_constellation(1)
        sig = synthesize(np.array([spec.points[2]]), 0.0, bank, Es=1.0)
        mo = matched_filter(sig, 0.0, bank)
        sigma2 = 0.4
        ctx = nda_context(1, spec, 1.0, sigma2)
        rho = 1.0 / (2 * sigma2)
        c = np.sqrt(1.0) / sigma2 * spec.d
        expect = (np.log(np.cosh(c * mo.u[0])) + np.log(np.cosh(c * mo.v[0]))
                  - 2 * rho * spec.d ** 2)
        np.testing.assert_allclose(ca_llf(ctx, mo), expect, rtol=1e-12)

    def test_noiseless_grid_scan_peaks_at_true_delay(self, bank):
        """The LLF argmax over a delay grid sits at the true delay."""
        spec = build_constellation(1)
        rng = np.random.default_rng(5)
        K = 60
        hits = 0
        trials = 200
        step = 1.0 / 64
        for _ in range(trials):
            sym = spec.points[rng.integers(0, 4, K)]
            tau = rng.uniform(0.05, 0.95)
            sig = synthesize(sym, tau, bank, Es=1.0)
            ctx = nda_context(K, spec, 1.0, 0.1)
            engine = LlfEngine(sig, bank, ctx)
            taus = np.arange(0.0, 1.0, step)
            best = taus[int(engine.grid_values(taus).argmax())]
            if abs(best - tau) <= step:
                hits += 1
        assert hits == trials

    def test_grad_hess_match_finite_differences(self, bank):
        spec = build_constellation(1)
        rng = np.random.default_rng(6)
        K = 50
        rho = 10 ** 0.3
        Es, sigma2 = 1.0, 1.0 / (2 * rho)
        for _ in range(10):
            sym = spec.points[rng.integers(0, 4, K)]
            sig = add_awgn(synthesize(sym, rng.uniform(0.1, 0.9), bank, Es),
                           sigma2, rng)
            frame = LlrFrame(rng.normal(0, 1.5, (K, 2)))
            engine = LlfEngine(sig, bank, make_context(frame, spec, Es, sigma2))
            th = rng.uniform(0.2, 0.8)
            _, grad, hess = engine.value_grad_hess(th)
            eps = 1e-6
            fd_g = (engine.value(th + eps) - engine.value(th - eps)) / (2 * eps)
            fd_h = (engine.value_grad_hess(th + eps)[1]
                    - engine.value_grad_hess(th - eps)[1]) / (2 * eps)
            assert grad == pytest.approx(fd_g, rel=1e-4)
            assert hess == pytest.approx(fd_h, rel=1e-3)

    def test_noiseless_stationary_point(self, bank):
        spec = build_constellation(1)
        rng = np.random.default_rng(7)
        K = 80
        sym = spec.points[rng.integers(0, 4, K)]
        tau = 0.5
        sig = synthesize(sym, tau, bank, Es=1.0)
        engine = LlfEngine(sig, bank, nda_context(K, spec, 1.0, 0.05))
        _, grad, hess = engine.value_grad_hess(tau)
        grid = np.arange(0.0, 1.0, 1.0 / 64)
        grads = np.array([engine.value_grad_hess(t)[1] for t in grid])
        assert abs(grad) < 1e-3 * np.sqrt(np.mean(grads ** 2))
        assert hess < 0

    def test_rejects_frame_mismatch(self, bank):
        spec = build_constellation(1)
        sig = synthesize(np.ones(10, complex) / np.sqrt(2), 0.0, bank)
        mo = matched_filter(sig, 0.0, bank)
        ctx = nda_context(9, spec, 1.0, 0.3)
        with pytest.raises(ValueError):
            ca_llf(ctx, mo)


class TestMarginalLaw:
    def test_pdf_normalization_random_rows(self):
        """Quadrature of the per-axis marginal pdf equals 1 (100 rows)."""
        spec = build_constellation(2)
        rng = np.random.default_rng(8)
        frame = LlrFrame(rng.normal(0, 2, (100, 4)))
        sigma2 = 0.35
        ctx = make_context(frame, spec, 1.0, sigma2)
        worst = 0.0
        for k in range(100):
            axis = int(rng.integers(0, 2))
            lb = ctx.coeffs.log_beta[axis][k]

            def pdf(u):
                return np.exp(np.log(2.0) + lb
                              - 0.5 * np.log(2 * np.pi * sigma2)
                              + log_f(ctx, k, axis, u) - u * u / (2 * sigma2))

            val, _ = quad(pdf, -25 * np.sqrt(sigma2), 25 * np.sqrt(sigma2),
                          limit=300)
            worst = max(worst, abs(val - 1.0))
        assert worst < 1e-8

    @pytest.mark.slow
    def test_simulated_matched_outputs_follow_the_law(self, bank):
        """Chi-square goodness of fit of u_k samples against the marginal
        pdf, 1e5 samples, 3 random LLR rows."""
        spec = build_constellation(2)
        rng = np.random.default_rng(9)
        frame_row = rng.normal(0, 1.5, (3, 4))
        sigma2 = 0.3
        Es = 1.0
        n_samples = 100_000
        for row in range(3):
            frame = LlrFrame(np.tile(frame_row[row], (1, 1)))
            ctx = make_context(frame, spec, Es, sigma2)
            apps = symbol_apps(frame, 0, spec)
            draws = rng.choice(spec.points, p=apps, size=n_samples)
            u = np.sqrt(Es) * draws.real + rng.normal(0, np.sqrt(sigma2),
                                                      n_samples)
            lb = ctx.coeffs.log_beta[AXIS_I][0]
            edges = np.quantile(u, np.linspace(0.0, 1.0, 41))
            edges[0], edges[-1] = -np.inf, np.inf

            def pdf(x):
                return np.exp(np.log(2.0) + lb
                              - 0.5 * np.log(2 * np.pi * sigma2)
                              + log_f(ctx, 0, AXIS_I, x) - x * x / (2 * sigma2))

            probs = np.array([quad(pdf, max(a, -40), min(b, 40), limit=200)[0]
                              for a, b in zip(edges[:-1], edges[1:])])
            probs /= probs.sum()
            counts = np.histogram(u, edges)[0]
            stat, pvalue = chisquare(counts, probs * n_samples)
            assert pvalue > 0.01
