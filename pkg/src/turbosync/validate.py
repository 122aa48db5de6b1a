"""Invariant battery behind the `validate` subcommand.

Each check returns a measured value against a tolerance so the report
shows how much margin the build has, not just pass/fail.  Mutation
checks run a deliberately wrong variant and pass when the wrongness is
*detected* (measured residual above a floor), demonstrating that the
surrounding oracles have teeth.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.integrate import quad

from .constellation import (AXIS_I, AXIS_Q, LlrFrame, axis_coefficients,
                            build_constellation, log_cosh, symbol_apps)
from .crlb import CrlbInputs, _fisher_terms, ca_crlb, empirical_fisher, psi
from .estimator import LlfEngine, SyncConfig, newton_raphson
from .likelihood import (log_f, log_f_values, make_context, nda_context)
from .turbo import TurboCodec, TurboConfig, bcjr_siso, build_trellis, rsc_encode
from .waveform import PulseBank, add_awgn, matched_filter, synthesize


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:44s} measured={self.measured:.3e} "
                f"tol={self.tolerance:.3e} {self.note}")


def _leq(name, measured, tol, note=""):
    return CheckResult(name, bool(measured <= tol), float(measured),
                       float(tol), note)


def _geq(name, measured, floor, note=""):
    return CheckResult(name, bool(measured >= floor), float(measured),
                       float(floor), note)


def check_constellation(rng) -> list:
    out = []
    worst_energy = 0.0
    gray_ok = True
    for p in (1, 2, 3, 4):
        spec = build_constellation(p)
        worst_energy = max(worst_energy,
                           abs(np.mean(np.abs(spec.points) ** 2) - 1.0))
        dmin = 2.0 * spec.d
        for m1 in range(spec.M):
            close = np.abs(spec.points - spec.points[m1]) < dmin * 1.001
            close[m1] = False
            for m2 in np.nonzero(close)[0]:
                if np.sum(spec.labels[m1] != spec.labels[m2]) != 1:
                    gray_ok = False
    out.append(_leq("unit average energy", worst_energy, 1e-12))
    out.append(CheckResult("gray neighbour labels differ in one bit",
                           gray_ok, float(gray_ok), 1.0))

    worst_mom = 0.0
    worst_norm = 0.0
    for p in (1, 2, 3):
        spec = build_constellation(p)
        frames = LlrFrame(rng.normal(0.0, 2.5, (60, 2 * p)))
        coeffs = axis_coefficients(frames, spec)
        for k in range(frames.K):
            apps = symbol_apps(frames, k, spec)
            for axis, part in ((AXIS_I, spec.points.real),
                               (AXIS_Q, spec.points.imag)):
                worst_mom = max(
                    worst_mom,
                    abs((apps * part ** 2).sum() - coeffs.omega[axis, k]),
                    abs((apps * part).sum() - coeffs.alpha[axis, k]))
        for axis in (AXIS_I, AXIS_Q):
            norm = 2.0 * coeffs.beta[axis] \
                * np.cosh(coeffs.sign_llr[axis] / 2.0) \
                * coeffs.theta[axis].sum(axis=1)
            worst_norm = max(worst_norm, float(np.abs(norm - 1.0).max()))
    out.append(_leq("prior moments match omega/alpha", worst_mom, 1e-12))
    out.append(_leq("axis normalization identity", worst_norm, 1e-12))

    # mutation: the uncorrected beta (magnitude bits only) must break the
    # normalization identity for p >= 1
    spec = build_constellation(2)
    frame = LlrFrame(rng.normal(0.0, 2.0, (40, 4)))
    coeffs = axis_coefficients(frame, spec)
    resid = 0.0
    for axis in (AXIS_I, AXIS_Q):
        ax = spec.axis_llrs(frame.llrs, axis)
        beta_bad = np.exp(-log_cosh(ax[:, :-1] / 2.0).sum(axis=1)
                          - (spec.p - 1) * np.log(2.0))
        norm = 2.0 * beta_bad * np.cosh(coeffs.sign_llr[axis] / 2.0) \
            * coeffs.theta[axis].sum(axis=1)
        resid = max(resid, float(np.abs(norm - 1.0).max()))
    out.append(_geq("mutated beta detected by normalization", resid, 1e-3,
                    "(sensitivity check)"))
    return out


def check_waveform(rng) -> list:
    out = []
    pb = PulseBank(rolloff=0.2, T=1.0, span=32, Q=8)
    m = np.arange(-pb.span * pb.Q, pb.span * pb.Q + 1)
    out.append(_leq("discrete root-pulse energy",
                    abs(pb.Ts * np.sum(pb.h(m * pb.Ts) ** 2) - 1.0), 1e-4))
    n = np.arange(1, pb.span + 1)
    out.append(_leq("nyquist zero crossings", np.abs(pb.g(n * 1.0)).max(), 1e-6))
    t = rng.uniform(-30.0, 30.0, 200)
    eps = 1e-5
    fd1 = (pb.g(t + eps) - pb.g(t - eps)) / (2 * eps)
    fd2 = (pb.g_d1(t + eps) - pb.g_d1(t - eps)) / (2 * eps)
    scale1 = np.maximum(np.abs(fd1), 1e-3)
    scale2 = np.maximum(np.abs(fd2), 1e-3)
    out.append(_leq("g' finite-difference match",
                    np.max(np.abs(pb.g_d1(t) - fd1) / scale1), 1e-6))
    out.append(_leq("g'' finite-difference match",
                    np.max(np.abs(pb.g_d2(t) - fd2) / scale2), 1e-6))

    sig = synthesize(np.zeros(400, dtype=complex), 0.25, pb, Es=1.0)
    sigma2 = 0.8
    noisy = add_awgn(sig, sigma2, rng)
    mo = matched_filter(noisy, 0.25, pb, derivatives=1)
    out.append(_leq("matched-filter noise calibration",
                    abs(mo.u.var() / sigma2 - 1.0), 0.25,
                    "(single frame; 3% at 1e4 trials in tests)"))
    r = abs(np.corrcoef(mo.u, mo.du)[0, 1])
    out.append(_leq("u / du independence", r, 3.0 / np.sqrt(mo.u.size)))
    return out


def check_likelihood(rng) -> list:
    out = []
    spec = build_constellation(2)
    K = 24
    frame = LlrFrame(rng.normal(0.0, 2.0, (K, 4)))
    Es, sigma2 = 1.0, 0.3
    ctx = make_context(frame, spec, Es, sigma2)

    # naive direct-sum oracle in the no-overflow regime
    worst = 0.0
    for _ in range(200):
        k = rng.integers(0, K)
        axis = int(rng.integers(0, 2))
        x = rng.normal(0.0, 1.0)
        A = spec.amplitudes
        th = ctx.coeffs.theta[axis][k]
        ls = ctx.coeffs.sign_llr[axis][k]
        direct = np.log(np.sum(
            th * np.exp(-ctx.rho * A ** 2)
            * np.cosh(ctx.scale * A * x + ls / 2.0)))
        worst = max(worst, abs(log_f(ctx, k, axis, x) - direct)
                    / max(abs(direct), 1e-12))
    out.append(_leq("log F naive-sum oracle", worst, 1e-12))

    # Lemma-style pdf normalization by adaptive quadrature
    worst = 0.0
    for k in range(0, K, 5):
        for axis in (AXIS_I, AXIS_Q):
            lb = ctx.coeffs.log_beta[axis][k]

            def pdf(u, k=k, axis=axis, lb=lb):
                return np.exp(np.log(2.0) + lb
                              - 0.5 * np.log(2 * np.pi * sigma2)
                              + log_f(ctx, k, axis, u)
                              - u ** 2 / (2 * sigma2))

            val, _ = quad(pdf, -30 * np.sqrt(sigma2), 30 * np.sqrt(sigma2),
                          limit=200)
            worst = max(worst, abs(val - 1.0))
    out.append(_leq("marginal pdf normalization", worst, 1e-8))

    # NDA reduction: zero-LLR CA path and the dedicated NDA context agree
    zero_ctx = nda_context(K, spec, Es, sigma2)
    x = rng.normal(0, 1, K)
    ca_zero = log_f_values(make_context(LlrFrame.zeros(K, 2), spec, Es, sigma2),
                           x, AXIS_I)
    out.append(_leq("NDA reduction of log F",
                    np.abs(ca_zero - log_f_values(zero_ctx, x, AXIS_I)).max(),
                    1e-12))
    return out


def check_crlb(rng) -> list:
    out = []
    pb = PulseBank(rolloff=0.2, T=1.0, span=32, Q=8)
    spec = build_constellation(1)
    K = 80
    frame = LlrFrame(rng.normal(0.5, 1.5, (K, 2)))
    inputs = CrlbInputs(frame=frame, spec=spec, rho=10 ** 0.2, pulses=pb)

    # dense trapezoid oracle for Psi
    coeffs = axis_coefficients(frame, spec)
    k = 7
    t = np.linspace(-40, 40, 160001)
    A = spec.amplitudes
    th = coeffs.theta[AXIS_I][k]
    ls = coeffs.sign_llr[AXIS_I][k]
    rho = inputs.rho
    lam = np.sum((A / spec.d) * th * np.exp(-rho * A ** 2)
                 * np.sinh(np.sqrt(rho) * np.outer(t, A) + ls / 2.0), axis=1)
    dl = np.sum(th * np.exp(-rho * A ** 2)
                * np.cosh(np.sqrt(rho) * np.outer(t, A) + ls / 2.0), axis=1)
    ref = coeffs.beta[AXIS_I][k] * spec.d ** 2 / np.sqrt(np.pi) \
        * np.trapezoid(lam ** 2 / dl * np.exp(-t ** 2 / 4.0), t)
    out.append(_leq("Psi trapezoid oracle",
                    abs(psi(inputs, k, AXIS_I) - ref) / abs(ref), 1e-8))

    gamma, psi_v, order, delta = _fisher_terms(inputs)
    overshoot = max(float(np.max(psi_v - coeffs.omega)), 0.0) \
        + max(float(-psi_v.min()), 0.0)
    out.append(_leq("Psi within [0, omega]", overshoot, 1e-12))
    out.append(_geq("Fisher positivity", float(gamma.sum()), 0.0))

    # translation invariance with identical rows
    uni = LlrFrame(np.tile(rng.normal(0.3, 1.0, (1, 2)), (K, 1)))
    g_u, _, _, _ = _fisher_terms(CrlbInputs(frame=uni, spec=spec,
                                            rho=inputs.rho, pulses=pb))
    mid = g_u[:, pb.span:K - pb.span]
    out.append(_leq("gamma translation invariance",
                    float(np.abs(mid - mid[:, :1]).max()
                          / np.abs(mid).max()), 1e-9))

    # closed form versus empirical Fisher (reduced trial count here)
    rep = ca_crlb(inputs)
    emp, se, _ = empirical_fisher(inputs, 2500, rng=rng)
    out.append(_leq("closed vs empirical Fisher",
                    abs(rep.fisher_ca - emp) / rep.fisher_ca, 0.05))

    # the sign-flipped gamma variant must disagree with the oracle
    g_bad, _, _, _ = _fisher_terms(inputs, variant="flipped")
    out.append(_geq("sign-flipped gamma variant detected",
                    abs(float(g_bad.sum()) - emp) / emp, 0.2,
                    "(sensitivity check)"))
    return out


def check_gradients(rng) -> list:
    out = []
    pb = PulseBank(rolloff=0.2, T=1.0, span=32, Q=8)
    worst_g = 0.0
    worst_h = 0.0
    for p in (1, 2):
        spec = build_constellation(p)
        K = 60
        rho = 10 ** 0.3
        Es, sigma2 = 1.0, 1.0 / (2 * rho)
        for _ in range(4):
            sym = spec.points[rng.integers(0, spec.M, K)]
            tau = rng.uniform(0.1, 0.9)
            sig = add_awgn(synthesize(sym, tau, pb, Es), sigma2, rng)
            frame = LlrFrame(rng.normal(0.0, 1.5, (K, 2 * p)))
            ctx = make_context(frame, spec, Es, sigma2)
            engine = LlfEngine(sig, pb, ctx)
            th = rng.uniform(0.2, 0.8)
            _, grad, hess = engine.value_grad_hess(th)
            eps = 1e-6
            fd_g = (engine.value(th + eps) - engine.value(th - eps)) / (2 * eps)
            gp = engine.value_grad_hess(th + eps)[1]
            gm = engine.value_grad_hess(th - eps)[1]
            fd_h = (gp - gm) / (2 * eps)
            worst_g = max(worst_g, abs(grad - fd_g) / max(abs(fd_g), 1e-9))
            worst_h = max(worst_h, abs(hess - fd_h) / max(abs(fd_h), 1e-9))
    out.append(_leq("LLF gradient finite-difference match", worst_g, 1e-4))
    out.append(_leq("LLF Hessian finite-difference match", worst_h, 1e-3))
    return out


def check_turbo(rng) -> list:
    out = []
    tr = build_trellis((1, 0, 1, 1), (1, 1, 0, 1))
    _, par, _ = rsc_encode([1, 0, 0, 0, 0], tr, terminate=False)
    out.append(CheckResult("impulse parity trace", par.tolist() == [1, 1, 1, 1, 0],
                           float(par.tolist() == [1, 1, 1, 1, 0]), 1.0))

    n = 6
    Ls = rng.normal(0, 2, n + 3)
    Lp = rng.normal(0, 2, n + 3)
    La = np.zeros(n + 3)
    La[:n] = rng.normal(0, 1, n)
    app, app_par, app_tail = bcjr_siso(Ls, Lp, La, tr, terminated=True)
    ref1 = np.full(n, -np.inf)
    ref0 = np.full(n, -np.inf)
    for bits in product((0, 1), repeat=n):
        so, po, _ = rsc_encode(list(bits), tr, terminate=True)
        w = float(np.sum((2 * so - 1) * Ls / 2) + np.sum((2 * po - 1) * Lp / 2)
                  + np.sum((2 * np.array(bits) - 1) * La[:n] / 2))
        for t in range(n):
            if bits[t]:
                ref1[t] = np.logaddexp(ref1[t], w)
            else:
                ref0[t] = np.logaddexp(ref0[t], w)
    out.append(_leq("BCJR enumeration oracle",
                    float(np.abs(app - (ref1 - ref0)).max()), 1e-9))

    cfg = TurboConfig(info_len=40, rate=1.0 / 3.0)
    codec = TurboCodec(cfg)
    x = rng.integers(0, 2, 40)
    y = rng.integers(0, 2, 40)
    lin = np.array_equal(codec.encode((x ^ y), 2).bits,
                         codec.encode(x, 2).bits ^ codec.encode(y, 2).bits)
    out.append(CheckResult("encoder linearity", lin, float(lin), 1.0))
    perm = codec.outer
    out.append(CheckResult("interleaver bijectivity",
                           np.array_equal(np.sort(perm), np.arange(perm.size)),
                           1.0, 1.0))
    return out


def check_estimator(rng) -> list:
    out = []
    pb = PulseBank(rolloff=0.2, T=1.0, span=32, Q=8)
    spec = build_constellation(1)
    K = 120
    sym = spec.points[rng.integers(0, 4, K)]
    tau = 0.43
    Es, sigma2 = 1.0, 0.05
    sig = add_awgn(synthesize(sym, tau, pb, Es), sigma2, rng)
    ctx = nda_context(K, spec, Es, sigma2)
    engine = LlfEngine(sig, pb, ctx)
    cfg = SyncConfig()
    res = newton_raphson(engine, tau + 0.007, cfg)
    dense = np.linspace(tau - 0.02, tau + 0.02, 4097)
    ref = dense[int(engine.grid_values(dense).argmax())]
    out.append(_leq("Newton vs dense-grid argmax",
                    abs(res.tau - ref), 2.0 / 4096 * 0.04 + cfg.epsilon))
    out.append(CheckResult("Newton convergence flag", res.converged,
                           float(res.converged), 1.0))
    return out


def run_all(seed: int = 20240817) -> list:
    rng = np.random.default_rng(seed)
    checks = []
    checks += check_constellation(rng)
    checks += check_waveform(rng)
    checks += check_likelihood(rng)
    checks += check_crlb(rng)
    checks += check_gradients(rng)
    checks += check_turbo(rng)
    checks += check_estimator(rng)
    return checks
