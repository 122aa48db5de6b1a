"""Closed-form code-aided log-likelihood of the timing parameter.

After matched filtering, the LLF of a candidate delay splits per symbol
and per axis into the log of

    F_kq(x) = sum_i theta_kq(i) * exp(-rho * A_i**2)
              * cosh(sqrt(Es) * A_i / sigma**2 * x + L_q(k) / 2)

evaluated at the in-phase (u_k) and quadrature (v_k) matched outputs,
where A_i runs over the positive axis amplitudes and L_q(k) is the
axis sign-bit LLR.  Everything here is evaluated in the log domain
(log-sum-exp over i, log-cosh, tanh-weighted ratios), which keeps the
algebra finite at any SNR and for |x| far beyond physical values.

The tau-derivatives follow by the chain rule through the derivative
matched-filter outputs: d/dtau ln F(u) = du * (ln F)'(u) and
d2/dtau2 ln F(u) = ddu * (ln F)'(u) + du**2 * (ln F)''(u).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .constellation import (AXIS_I, AXIS_Q, AxisCoefficients, GrayQam,
                            LlrFrame, axis_coefficients, log_cosh)
from .waveform import MatchedOutputs


@dataclass(frozen=True)
class LikelihoodContext:
    """Frozen per-frame tables for evaluating the code-aided LLF.

    ``interior`` lists the symbols whose terms enter estimator-facing
    sums.  The default keeps the whole frame: every symbol's matched
    statistics are exact (the sample grid spans the full pulse support),
    and whole-frame sums preserve the pairwise cancellation of ISI
    self-noise that an asymmetric subset would break.
    """

    frame: LlrFrame
    spec: GrayQam
    Es: float
    sigma2: float
    coeffs: AxisCoefficients
    interior: np.ndarray

    @property
    def rho(self) -> float:
        return self.Es / (2.0 * self.sigma2)

    @property
    def scale(self) -> float:
        """sqrt(Es)/sigma**2, the x multiplier inside cosh."""
        return np.sqrt(self.Es) / self.sigma2

    @property
    def K(self) -> int:
        return self.frame.K


def make_context(frame: LlrFrame, spec: GrayQam, Es: float, sigma2: float,
                 edge_exclude: int = 0) -> LikelihoodContext:
    if sigma2 <= 0 or Es <= 0:
        raise ValueError("Es and sigma2 must be positive")
    if frame.bits_per_symbol != spec.bits_per_symbol:
        raise ValueError("frame and constellation disagree on bits per symbol")
    K = frame.K
    lo, hi = edge_exclude, K - edge_exclude
    if hi <= lo:
        raise ValueError("edge exclusion leaves no interior symbols")
    return LikelihoodContext(frame=frame, spec=spec, Es=float(Es),
                             sigma2=float(sigma2),
                             coeffs=axis_coefficients(frame, spec),
                             interior=np.arange(lo, hi))


def nda_context(K: int, spec: GrayQam, Es: float, sigma2: float,
                edge_exclude: int = 0) -> LikelihoodContext:
    """Equiprobable-symbol (all-zero LLR) context."""
    return make_context(LlrFrame.zeros(K, spec.p), spec, Es, sigma2,
                        edge_exclude)


def _axis_terms(ctx: LikelihoodContext, x: np.ndarray, axis: int):
    """Per-amplitude log weights and cosh arguments for one axis.

    x has shape (..., K); returns (log_w, arg) with trailing axis over
    the 2**(p-1) amplitudes, where
    log_w = log theta - rho*A**2 + log cosh(arg) and
    arg = scale*A*x + L_sign/2.
    """
    A = ctx.coeffs.amplitudes
    log_theta = ctx.coeffs.log_theta[axis]            # (K, n_i)
    sign_half = ctx.coeffs.sign_llr[axis] / 2.0       # (K,)
    arg = ctx.scale * np.asarray(x)[..., None] * A + sign_half[:, None]
    log_w = log_theta - ctx.rho * A ** 2 + log_cosh(arg)
    return log_w, arg


def log_f_values(ctx: LikelihoodContext, x: np.ndarray, axis: int) -> np.ndarray:
    """ln F_k(x_k) for every symbol k of one axis; x shaped (..., K)."""
    log_w, _ = _axis_terms(ctx, x, axis)
    return logsumexp(log_w, axis=-1)


def log_f_derivs(ctx: LikelihoodContext, x: np.ndarray, axis: int):
    """(ln F, (ln F)', (ln F)'') of one axis at x, all shaped like x.

    The derivative ratios are softmax-weighted tanh sums, so they stay
    bounded by scale*A_max no matter how large |x| gets.
    """
    log_w, arg = _axis_terms(ctx, x, axis)
    logF = logsumexp(log_w, axis=-1)
    r = np.exp(log_w - logF[..., None])
    cA = ctx.scale * ctx.coeffs.amplitudes
    d1 = (r * (cA * np.tanh(arg))).sum(axis=-1)
    f2_over_f = (r * cA ** 2).sum(axis=-1)
    d2 = f2_over_f - d1 ** 2
    return logF, d1, d2


def _check_index(ctx, k):
    if not 0 <= k < ctx.K:
        raise IndexError(f"symbol index {k} outside frame of length {ctx.K}")


def log_f(ctx: LikelihoodContext, k: int, axis: int, x: float) -> float:
    """ln F for symbol k on one axis (AXIS_I or AXIS_Q) at point x."""
    _check_index(ctx, k)
    xs = np.zeros(ctx.K)
    xs[k] = x
    return float(log_f_values(ctx, xs, axis)[k])


def log_f_d1(ctx: LikelihoodContext, k: int, axis: int, x: float) -> float:
    """(ln F)'(x) = F'/F for symbol k on one axis."""
    _check_index(ctx, k)
    xs = np.zeros(ctx.K)
    xs[k] = x
    return float(log_f_derivs(ctx, xs, axis)[1][k])


def log_f_d2(ctx: LikelihoodContext, k: int, axis: int, x: float) -> float:
    """(ln F)''(x) = F''/F - (F'/F)**2 for symbol k on one axis."""
    _check_index(ctx, k)
    xs = np.zeros(ctx.K)
    xs[k] = x
    return float(log_f_derivs(ctx, xs, axis)[2][k])


def ca_llf(ctx: LikelihoodContext, mo: MatchedOutputs) -> float:
    """Code-aided LLF at the matched outputs' candidate delay.

    Additive terms that do not depend on the delay (the 4*beta_k
    constants) are dropped; only LLF differences are meaningful.
    """
    if mo.y.shape != (ctx.K,):
        raise ValueError("matched outputs do not match the frame length")
    lu = log_f_values(ctx, mo.u, AXIS_I)
    lv = log_f_values(ctx, mo.v, AXIS_Q)
    idx = ctx.interior
    return float(lu[idx].sum() + lv[idx].sum())


def nda_llf(ctx: LikelihoodContext, mo: MatchedOutputs) -> float:
    """Non-data-aided LLF: the code-aided LLF of an all-zero LLR frame."""
    if not ctx.frame.is_zero():
        raise ValueError("nda_llf requires an all-zero LLR context")
    return ca_llf(ctx, mo)


def ca_llf_grad_hess(ctx: LikelihoodContext, mo: MatchedOutputs):
    """(LLF, dLLF/dtau, d2LLF/dtau2) at the matched outputs' delay.

    Requires first- and second-order derivative filter outputs on mo.
    """
    if mo.du is None or mo.ddu is None:
        raise ValueError("matched outputs lack derivative-filter branches")
    _, du1, du2 = log_f_derivs(ctx, mo.u, AXIS_I)
    _, dv1, dv2 = log_f_derivs(ctx, mo.v, AXIS_Q)
    lu = log_f_values(ctx, mo.u, AXIS_I)
    lv = log_f_values(ctx, mo.v, AXIS_Q)
    idx = ctx.interior
    value = float(lu[idx].sum() + lv[idx].sum())
    grad = float((mo.du[idx] * du1[idx]).sum() + (mo.dv[idx] * dv1[idx]).sum())
    hess = float((mo.ddu[idx] * du1[idx] + mo.du[idx] ** 2 * du2[idx]).sum()
                 + (mo.ddv[idx] * dv1[idx] + mo.dv[idx] ** 2 * dv2[idx]).sum())
    return value, grad, hess


def llf_curvature_samples(ctx: LikelihoodContext, u, v, du, dv, ddu, ddv):
    """Batched d2LLF/dtau2 for (B, K) matched-output arrays.

    Used by the empirical Fisher oracle; one curvature value per row.
    """
    _, du1, du2 = log_f_derivs(ctx, u, AXIS_I)
    _, dv1, dv2 = log_f_derivs(ctx, v, AXIS_Q)
    idx = ctx.interior
    out = (ddu[..., idx] * du1[..., idx] + du[..., idx] ** 2 * du2[..., idx]).sum(axis=-1)
    out += (ddv[..., idx] * dv1[..., idx] + dv[..., idx] ** 2 * dv2[..., idx]).sum(axis=-1)
    return out
