"""NDA bootstrap and code-aided ML timing estimation.

The estimate is bootstrapped by a coarse grid scan of the
non-data-aided LLF followed by safeguarded Newton-Raphson refinement.
Each turbo iteration then re-synchronizes the matched filter at the
current estimate, soft-demaps, runs one decoder exchange, converts the
decoder's a-posteriori LLRs into fresh bit priors (posterior minus the
demapper's bit likelihood), rebuilds the code-aided LLF with those
priors and refines the delay again, initialized at the previous
estimate.

The Newton safeguards keep the bare recursion honest at low SNR: a
non-negative curvature or an oversized step falls back to a damped
gradient step, and every accepted step must not decrease the LLF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import (GrayQam, LlrFrame, clamp_llrs, soft_demap_frame)
from .likelihood import (LikelihoodContext, ca_llf, ca_llf_grad_hess,
                         log_f_values, make_context, nda_context)
from .constellation import AXIS_I, AXIS_Q
from .turbo import TurboCodec
from .waveform import (PulseBank, SampledSignal, matched_filter,
                       matched_filter_grid)


class DegenerateLlfError(RuntimeError):
    """The LLF carries no timing information (e.g. an all-zero signal)."""


@dataclass(frozen=True)
class SyncConfig:
    """Estimator knobs; delays are expressed as fractions of T."""

    grid_step: float = 1.0 / 64.0
    epsilon: float = 1e-6
    max_newton_iters: int = 50
    turbo_iterations: int = 10
    uniform_demap_priors: bool = False
    decoder_exchanges: int = 1

    def __post_init__(self):
        if not 0.0 < self.epsilon < self.grid_step:
            raise ValueError("need 0 < epsilon < grid_step")
        if self.max_newton_iters < 1 or self.decoder_exchanges < 1:
            raise ValueError("iteration counts must be positive")
        if self.turbo_iterations < 0:
            raise ValueError("turbo_iterations must be >= 0")


@dataclass(frozen=True)
class NewtonResult:
    tau: float
    iterations: int
    converged: bool
    llf: float


@dataclass(frozen=True)
class SyncStep:
    """One turbo iteration of the synchronization loop."""

    tau: float
    newton_iters: int
    newton_converged: bool
    llf: float
    ber: float | None


@dataclass(frozen=True)
class SyncTrace:
    nda_tau: float
    nda_result: NewtonResult
    steps: tuple
    tau_final: float

    @property
    def converged(self) -> bool:
        return self.nda_result.converged and all(
            s.newton_converged for s in self.steps)


class LlfEngine:
    """Binds a received signal and an LLR context into a callable LLF.

    Every evaluation re-runs the matched (and derivative-matched)
    filters at the candidate delay, which is exactly the re-synchronize
    step of the estimation loop.
    """

    def __init__(self, signal: SampledSignal, pulses: PulseBank,
                 ctx: LikelihoodContext):
        if ctx.K != signal.K:
            raise ValueError("context frame and signal disagree on K")
        self.signal = signal
        self.pulses = pulses
        self.ctx = ctx

    def with_context(self, ctx: LikelihoodContext) -> "LlfEngine":
        return LlfEngine(self.signal, self.pulses, ctx)

    def value(self, tau: float) -> float:
        mo = matched_filter(self.signal, tau, self.pulses)
        return ca_llf(self.ctx, mo)

    def value_grad_hess(self, tau: float):
        mo = matched_filter(self.signal, tau, self.pulses, derivatives=2)
        return ca_llf_grad_hess(self.ctx, mo)

    def grid_values(self, taus: np.ndarray) -> np.ndarray:
        y = matched_filter_grid(self.signal, taus, self.pulses)  # (n, K)
        lu = log_f_values(self.ctx, y.real, AXIS_I)
        lv = log_f_values(self.ctx, y.imag, AXIS_Q)
        idx = self.ctx.interior
        return lu[:, idx].sum(axis=1) + lv[:, idx].sum(axis=1)


def wrap_delay_error(err, T: float):
    """Minimal-magnitude representative of a delay error modulo T."""
    return (np.asarray(err) + 0.5 * T) % T - 0.5 * T


def newton_raphson(engine: LlfEngine, tau0: float, cfg: SyncConfig) -> NewtonResult:
    """Safeguarded Newton-Raphson ascent of the LLF from tau0.

    Stops once an accepted step is within epsilon; a non-concave point
    or an oversized Newton step degrades to a damped gradient step, and
    steps are halved until the LLF does not decrease.
    """
    T = engine.pulses.T
    step_cap = cfg.grid_step * T
    eps = cfg.epsilon * T
    lo, hi = -0.75 * T, 1.75 * T

    tau = float(tau0)
    value, grad, hess = engine.value_grad_hess(tau)
    for it in range(1, cfg.max_newton_iters + 1):
        newton = -grad / hess if hess < 0 else np.inf
        if hess >= 0 or abs(newton) > step_cap:
            step = np.sign(grad) * min(0.5 * step_cap, abs(newton))
            if step == 0.0:
                step = np.sign(grad) * 0.5 * step_cap
        else:
            step = newton
        accepted = False
        for _ in range(12):
            cand = float(np.clip(tau + step, lo, hi))
            c_value, c_grad, c_hess = engine.value_grad_hess(cand)
            if c_value >= value or cand == tau:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return NewtonResult(tau=tau, iterations=it, converged=True,
                                llf=value)
        moved = abs(cand - tau)
        tau, value, grad, hess = cand, c_value, c_grad, c_hess
        if moved <= eps:
            return NewtonResult(tau=tau, iterations=it, converged=True,
                                llf=value)
    return NewtonResult(tau=tau, iterations=cfg.max_newton_iters,
                        converged=False, llf=value)


def ml_estimate(engine: LlfEngine, cfg: SyncConfig) -> NewtonResult:
    """Coarse grid scan over [0, T) followed by Newton refinement."""
    T = engine.pulses.T
    taus = np.arange(0.0, 1.0, cfg.grid_step) * T
    values = engine.grid_values(taus)
    spread = values.max() - values.min()
    if not np.isfinite(spread) or spread <= 1e-9 * max(1.0, abs(values.max())):
        raise DegenerateLlfError("LLF is flat over the delay grid")
    return newton_raphson(engine, float(taus[int(values.argmax())]), cfg)


def nda_estimate(signal: SampledSignal, spec: GrayQam, pulses: PulseBank,
                 cfg: SyncConfig, Es: float, sigma2: float):
    """Non-data-aided bootstrap estimate (all-zero LLR priors).

    Returns (tau_hat, NewtonResult); tau_hat is wrapped into [0, T).
    """
    ctx = nda_context(signal.K, spec, Es, sigma2)
    res = ml_estimate(LlfEngine(signal, pulses, ctx), cfg)
    return res.tau % pulses.T, res


def ca_sync_loop(signal: SampledSignal, codec: TurboCodec, spec: GrayQam,
                 pulses: PulseBank, cfg: SyncConfig, Es: float, sigma2: float,
                 info_bits: np.ndarray | None = None):
    """Full code-aided turbo synchronization of one received frame.

    Runs the NDA bootstrap, then ``cfg.turbo_iterations`` rounds of
    {matched filter at the current estimate -> soft demap -> decoder
    exchange -> refreshed bit priors -> Newton refinement}.  When
    ``info_bits`` is given, per-iteration BER is recorded in the trace
    for diagnostics only; nothing downstream reads it.

    Returns (tau_final, SyncTrace, decoded_bits); decoded_bits is None
    when no turbo iterations were run.
    """
    K = signal.K
    nbits = spec.bits_per_symbol
    if codec.n_code != K * nbits:
        raise ValueError(f"codec frame ({codec.n_code} bits) does not fill "
                         f"{K} symbols of {nbits} bits")
    edge = 0
    nda_tau, nda_res = nda_estimate(signal, spec, pulses, cfg, Es, sigma2)

    tau = nda_res.tau          # unwrapped internal value for continuity
    state = codec.new_state()
    priors = LlrFrame.zeros(K, spec.p)
    engine = LlfEngine(signal, pulses,
                       nda_context(K, spec, Es, sigma2, edge_exclude=edge))
    steps = []
    decoded = None
    lam_flat = None
    for _ in range(cfg.turbo_iterations):
        mo = matched_filter(signal, tau, pulses)
        lam = soft_demap_frame(mo.y, priors, spec, Es, sigma2,
                               uniform_other_priors=cfg.uniform_demap_priors)
        lam_flat = lam.reshape(-1)
        for _ in range(cfg.decoder_exchanges):
            upsilon, state = codec.iterate(lam_flat, state)
        priors = LlrFrame(clamp_llrs(upsilon - lam_flat).reshape(K, nbits))
        ctx = make_context(priors, spec, Es, sigma2, edge_exclude=edge)
        res = newton_raphson(engine.with_context(ctx), tau, cfg)
        tau = res.tau
        ber = None
        if info_bits is not None:
            decoded = codec.decode_bits(state, lam_flat)
            ber = float(np.mean(decoded != info_bits))
        steps.append(SyncStep(tau=res.tau % pulses.T,
                              newton_iters=res.iterations,
                              newton_converged=res.converged,
                              llf=res.llf, ber=ber))
    if cfg.turbo_iterations > 0 and lam_flat is not None:
        decoded = codec.decode_bits(state, lam_flat)

    tau_final = tau % pulses.T
    trace = SyncTrace(nda_tau=nda_tau, nda_result=nda_res,
                      steps=tuple(steps), tau_final=tau_final)
    return tau_final, trace, decoded
