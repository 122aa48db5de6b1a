"""Gray-coded square-QAM geometry and LLR-parametrized symbol statistics.

A square M-QAM constellation (M = 4**p) factors into two independent
amplitude axes (in-phase and quadrature).  With the reflected-Gray
labeling used here, every per-axis quantity needed by the code-aided
timing machinery -- symbol a-priori probabilities, their first and
second moments, and the soft-demapper bit likelihoods -- reduces to
small sums over the 2**(p-1) positive amplitude levels of one axis,
weighted by per-bit LLR factors.

Bit layout inside a 2p-bit symbol label (positions 1..2p):
even positions carry the in-phase axis (position 2p is its sign bit),
odd positions carry the quadrature axis (sign bit at 2p-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit, logsumexp

# Per-bit LLR clamp.  Keeps every cosh/exp finite in double precision while
# leaving clamped priors within ~2e-22 of a hard decision.
LLR_MAX = 50.0

# Axis indices used throughout: 0 = in-phase (bit 2p family),
# 1 = quadrature (bit 2p-1 family).
AXIS_I = 0
AXIS_Q = 1


def clamp_llrs(llrs):
    """Clip LLRs to [-LLR_MAX, +LLR_MAX], mapping non-finite values to the rails."""
    llrs = np.nan_to_num(np.asarray(llrs, dtype=float),
                         nan=0.0, posinf=LLR_MAX, neginf=-LLR_MAX)
    return np.clip(llrs, -LLR_MAX, LLR_MAX)


def log_cosh(x):
    """ln(cosh(x)), overflow-free for any float64 argument."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


@dataclass(frozen=True)
class GrayQam:
    """Unit-energy Gray-labelled square QAM alphabet.

    Attributes
    ----------
    p : int
        Half the bits per symbol; M = 4**p points.
    d : float
        Half the minimum inter-symbol distance, sqrt(3 / (2*(M-1))).
    points : ndarray, shape (M,)
        Complex symbol amplitudes.
    labels : ndarray, shape (M, 2p)
        labels[m, l-1] is bit position l of point m.
    amplitudes : ndarray, shape (2**(p-1),)
        Positive axis levels (2i-1)*d for i = 1..2**(p-1).
    mag_bits : ndarray, shape (2**(p-1), p-1)
        Gray bits addressing amplitude index i on one axis
        (shared by both axes); column t feeds label position 2t+2
        on the in-phase axis and 2t+1 on the quadrature axis.
    quadrant_index : dict
        Maps top-right-quadrant point index m to its (i, n) grid
        coordinates, points[m] = (2i-1)*d + 1j*(2n-1)*d.
    """

    p: int
    d: float
    points: np.ndarray
    labels: np.ndarray
    amplitudes: np.ndarray
    mag_bits: np.ndarray
    quadrant_index: dict

    @property
    def M(self) -> int:
        return self.points.size

    @property
    def bits_per_symbol(self) -> int:
        return 2 * self.p

    def axis_llrs(self, llrs: np.ndarray, axis: int) -> np.ndarray:
        """Slice the (..., 2p) LLR array down to one axis's p bits.

        Column t of the result is the LLR of axis-Gray bit t; the sign
        bit sits in the last column (t = p-1).
        """
        if axis == AXIS_I:
            return llrs[..., 1::2]
        return llrs[..., 0::2]


def _axis_gray_levels(p: int) -> np.ndarray:
    """Gray label (as an integer) of each of the 2**p levels of one axis,
    ordered from the most negative amplitude to the most positive."""
    j = np.arange(2 ** p)
    return j ^ (j >> 1)


def build_constellation(p: int) -> GrayQam:
    """Construct the unit-energy Gray-mapped square QAM with 4**p points.

    The labeling applies a reflected binary Gray code independently per
    axis, so the most significant axis bit is the amplitude sign and the
    remaining p-1 bits address the magnitude mirror-symmetrically about
    the origin.  This is what makes all nearest neighbours differ in
    exactly one bit and the quadrant factorization exact.
    """
    if not (1 <= int(p) == p <= 4):
        raise ValueError(f"p must be an integer in [1, 4], got {p!r}")
    p = int(p)
    M = 4 ** p
    nlev = 2 ** p
    d = np.sqrt(3.0 / (2.0 * (M - 1)))
    levels = (2 * np.arange(nlev) + 1 - nlev) * d
    gray = _axis_gray_levels(p)

    points = np.empty(M, dtype=complex)
    labels = np.zeros((M, 2 * p), dtype=np.int8)
    quadrant_index = {}
    for ji in range(nlev):
        for jq in range(nlev):
            m = ji * nlev + jq
            points[m] = levels[ji] + 1j * levels[jq]
            for t in range(p):
                labels[m, 2 * t + 1] = (gray[ji] >> t) & 1
                labels[m, 2 * t] = (gray[jq] >> t) & 1
            if levels[ji] > 0 and levels[jq] > 0:
                i = ji - nlev // 2 + 1
                n = jq - nlev // 2 + 1
                quadrant_index[m] = (i, n)

    half = nlev // 2
    n_i = 2 ** (p - 1)
    amplitudes = (2 * np.arange(1, n_i + 1) - 1) * d
    mag_bits = np.zeros((n_i, p - 1), dtype=np.int8)
    for i in range(1, n_i + 1):
        g = gray[half + i - 1]
        for t in range(p - 1):
            mag_bits[i - 1, t] = (g >> t) & 1

    return GrayQam(p=p, d=float(d), points=points, labels=labels,
                   amplitudes=amplitudes, mag_bits=mag_bits,
                   quadrant_index=quadrant_index)


@dataclass(frozen=True)
class LlrFrame:
    """Per-symbol, per-bit a-priori LLRs; the parameter of every
    code-aided quantity.  Row k holds the 2p bit LLRs of symbol k,
    clamped to [-LLR_MAX, LLR_MAX].  An all-zero frame is the
    non-data-aided (equiprobable) case."""

    llrs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "llrs", clamp_llrs(self.llrs))
        if self.llrs.ndim != 2:
            raise ValueError("llrs must be a K x 2p matrix")

    @property
    def K(self) -> int:
        return self.llrs.shape[0]

    @property
    def bits_per_symbol(self) -> int:
        return self.llrs.shape[1]

    @classmethod
    def zeros(cls, K: int, p: int) -> "LlrFrame":
        return cls(np.zeros((K, 2 * p)))

    def is_zero(self) -> bool:
        return not np.any(self.llrs)


def bit_prior(llr: float, bit: int) -> float:
    """P[b = bit] for a bit with a-priori LLR ln(P[1]/P[0]).

    Evaluated through the log-sigmoid, so both branches are stable and
    P[b=0] + P[b=1] = 1 holds exactly.
    """
    if bit not in (0, 1):
        raise ValueError("bit must be 0 or 1")
    llr = float(clamp_llrs(llr))
    return float(np.exp(log_expit(llr if bit == 1 else -llr)))


def symbol_log_apps(frame: LlrFrame, spec: GrayQam) -> np.ndarray:
    """(K, M) matrix of log symbol a-priori probabilities.

    log P[a(k) = c_m] = sum over bit positions of the log prior of the
    label bit, i.e. the independent-bit product implied by the frame.
    """
    signs = 2.0 * spec.labels.astype(float) - 1.0      # (M, 2p) in {-1,+1}
    return log_expit(frame.llrs[:, None, :] * signs[None, :, :]).sum(axis=2)


def symbol_apps(frame: LlrFrame, k: int, spec: GrayQam) -> np.ndarray:
    """A-priori probability vector over the M constellation points for
    symbol index k.  Sums to 1 up to rounding."""
    if not 0 <= k < frame.K:
        raise IndexError(f"symbol index {k} outside frame of length {frame.K}")
    signs = 2.0 * spec.labels.astype(float) - 1.0
    return np.exp(log_expit(signs * frame.llrs[k]).sum(axis=1))


@dataclass(frozen=True)
class AxisCoefficients:
    """Whole-frame per-axis coefficient tables.

    Arrays are indexed [axis, k] with axis AXIS_I / AXIS_Q; ``theta``
    is [axis, k, i] over the 2**(p-1) amplitude indices.

    ``omega`` is the second moment of the selected axis component of
    a(k) under the frame's priors (amplitude**2 units), ``alpha`` the
    first moment, ``beta`` the product of 1/(2 cosh(L/2)) over the
    axis's p bit LLRs.  They satisfy
    2 * beta * cosh(L_sign / 2) * sum_i theta_i = 1.
    """

    beta: np.ndarray
    log_beta: np.ndarray
    theta: np.ndarray
    log_theta: np.ndarray
    sign_llr: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray
    amplitudes: np.ndarray


def axis_coefficients(frame: LlrFrame, spec: GrayQam) -> AxisCoefficients:
    """Compute beta, theta, omega, alpha for every symbol and both axes."""
    K = frame.K
    p = spec.p
    n_i = 2 ** (p - 1)
    A = spec.amplitudes

    beta = np.empty((2, K))
    log_beta = np.empty((2, K))
    theta = np.empty((2, K, n_i))
    log_theta = np.empty((2, K, n_i))
    sign_llr = np.empty((2, K))
    omega = np.empty((2, K))
    alpha = np.empty((2, K))

    mag_signs = 2.0 * spec.mag_bits.astype(float) - 1.0   # (n_i, p-1)
    for axis in (AXIS_I, AXIS_Q):
        ax_llrs = spec.axis_llrs(frame.llrs, axis)         # (K, p)
        sign_llr[axis] = ax_llrs[:, p - 1]
        log_beta[axis] = -log_cosh(ax_llrs / 2.0).sum(axis=1) - p * np.log(2.0)
        beta[axis] = np.exp(log_beta[axis])
        # theta_i = prod over magnitude bits of exp(+-L/2); empty product at p=1
        log_theta[axis] = 0.5 * ax_llrs[:, : p - 1] @ mag_signs.T
        theta[axis] = np.exp(log_theta[axis])
        half = sign_llr[axis] / 2.0
        omega[axis] = 2.0 * beta[axis] * np.cosh(half) * (theta[axis] @ (A ** 2))
        alpha[axis] = 2.0 * beta[axis] * np.sinh(half) * (theta[axis] @ A)

    return AxisCoefficients(beta=beta, log_beta=log_beta, theta=theta,
                            log_theta=log_theta, sign_llr=sign_llr,
                            omega=omega, alpha=alpha, amplitudes=A)


@dataclass(frozen=True)
class CoefficientSet:
    """Per-symbol view of the axis coefficients; index 0 of each pair is
    the in-phase axis, index 1 the quadrature axis."""

    beta: np.ndarray        # (2,)
    theta: np.ndarray       # (2, 2**(p-1))
    omega: np.ndarray       # (2,)
    alpha: np.ndarray       # (2,)


def coefficients(frame: LlrFrame, k: int, spec: GrayQam) -> CoefficientSet:
    """beta/theta/omega/alpha of symbol k under the frame's priors."""
    if not 0 <= k < frame.K:
        raise IndexError(f"symbol index {k} outside frame of length {frame.K}")
    ac = axis_coefficients(frame, spec)
    return CoefficientSet(beta=ac.beta[:, k].copy(),
                          theta=ac.theta[:, k, :].copy(),
                          omega=ac.omega[:, k].copy(),
                          alpha=ac.alpha[:, k].copy())


def modulate_bits(code_bits: np.ndarray, spec: GrayQam) -> np.ndarray:
    """Map a code-bit stream onto constellation symbols.

    Bit j lands at position (j mod 2p) + 1 of symbol j // 2p, matching
    the demapper's flattening of its (K, 2p) output.
    """
    bits = np.asarray(code_bits, dtype=np.int8)
    nbits = spec.bits_per_symbol
    if bits.ndim != 1 or bits.size % nbits:
        raise ValueError("code-bit count must be a multiple of 2p")
    groups = bits.reshape(-1, nbits)
    keys = groups @ (1 << np.arange(nbits))
    lut = np.empty(2 ** nbits, dtype=complex)
    lut[spec.labels @ (1 << np.arange(nbits))] = spec.points
    return lut[keys]


def soft_demap_frame(y: np.ndarray, frame: LlrFrame, spec: GrayQam,
                     Es: float, sigma2: float,
                     uniform_other_priors: bool = False) -> np.ndarray:
    """Bit likelihoods ln p[y | b=1] / p[y | b=0] for a symbol-rate frame.

    For each bit the marginalization over the other 2p-1 bits uses the
    frame's current priors (set ``uniform_other_priors`` to marginalize
    with equiprobable bits instead).  The bit's own prior is always
    excluded, so the output never double-counts the a-priori LLR.

    Parameters
    ----------
    y : ndarray, shape (K,)
        Matched-filter outputs, one complex sample per symbol.
    Es, sigma2 : float
        Signal energy scale and per-dimension noise variance of y.

    Returns
    -------
    ndarray, shape (K, 2p), clamped to [-LLR_MAX, LLR_MAX].
    """
    if sigma2 <= 0 or Es <= 0:
        raise ValueError("Es and sigma2 must be positive")
    y = np.asarray(y, dtype=complex)
    if y.shape != (frame.K,):
        raise ValueError("y must have one sample per frame row")

    signs = 2.0 * spec.labels.astype(float) - 1.0       # (M, 2p)
    log_g = -np.abs(y[:, None] - np.sqrt(Es) * spec.points[None, :]) ** 2 \
        / (2.0 * sigma2)                                 # (K, M)
    if uniform_other_priors:
        log_bit_priors = np.zeros((frame.K, spec.M, spec.bits_per_symbol))
    else:
        log_bit_priors = log_expit(frame.llrs[:, None, :] * signs[None, :, :])
    log_post = log_g + log_bit_priors.sum(axis=2)        # (K, M)

    nbits = spec.bits_per_symbol
    lam = np.empty((frame.K, nbits))
    with np.errstate(divide="ignore"):
        for l in range(nbits):
            # remove bit l's own prior from the mass of every point
            excl = log_post - log_bit_priors[:, :, l]
            one = spec.labels[:, l] == 1
            num = logsumexp(excl[:, one], axis=1)
            den = logsumexp(excl[:, ~one], axis=1)
            lam[:, l] = num - den
    return clamp_llrs(lam)


def soft_demap(y_k: complex, frame: LlrFrame, k: int, spec: GrayQam,
               Es: float, sigma2: float,
               uniform_other_priors: bool = False) -> np.ndarray:
    """Single-symbol soft demap; see :func:`soft_demap_frame`."""
    if not 0 <= k < frame.K:
        raise IndexError(f"symbol index {k} outside frame of length {frame.K}")
    sub = LlrFrame(frame.llrs[k : k + 1])
    return soft_demap_frame(np.array([y_k]), sub, spec, Es, sigma2,
                            uniform_other_priors)[0]
