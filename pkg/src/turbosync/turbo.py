"""Parallel-concatenated RSC turbo codec with log-MAP SISO decoding.

Two identical recursive systematic convolutional encoders (feedback
1011, feedforward 1101, MSB first, 8 states) are concatenated through a
seeded random inner interleaver.  The first encoder is trellis
terminated with tail bits, the second left open.  Parities are
punctured to rate 1/2 (alternating between encoders) or kept for rate
1/3, the multiplexed stream is scrambled by a seeded outer interleaver,
and the decoder mirrors the whole chain to exchange extrinsic
information between two exact log-MAP SISO passes.

A-posteriori LLRs are produced for *every* transmitted code bit
(systematic, tail and parity), which is what the code-aided timing
machinery consumes each turbo iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import LLR_MAX

RATE_HALF = 0.5
RATE_THIRD = 1.0 / 3.0


def _rate_tag(rate: float) -> str:
    if abs(rate - RATE_HALF) < 1e-9:
        return "1/2"
    if abs(rate - RATE_THIRD) < 1e-9:
        return "1/3"
    raise ValueError(f"unsupported code rate {rate!r}; use 1/2 or 1/3")


@dataclass(frozen=True)
class TurboConfig:
    """Code and interleaver parameters for one turbo-coded frame."""

    info_len: int
    rate: float = RATE_THIRD
    feedback_poly: tuple = (1, 0, 1, 1)
    feedforward_poly: tuple = (1, 1, 0, 1)
    inner_seed: int = 101
    outer_seed: int = 202
    iterations: int = 10

    def __post_init__(self):
        if self.feedback_poly[0] != 1 or self.feedforward_poly[0] != 1:
            raise ValueError("generator polynomials must lead with 1")
        if len(self.feedback_poly) != len(self.feedforward_poly):
            raise ValueError("generator polynomials must share one length")
        _rate_tag(self.rate)
        if self.info_len < 1:
            raise ValueError("info_len must be positive")

    @property
    def memory(self) -> int:
        return len(self.feedback_poly) - 1

    @property
    def n_code_bits(self) -> int:
        tail = 2 * self.memory
        if _rate_tag(self.rate) == "1/2":
            return 2 * self.info_len + tail
        return 3 * self.info_len + tail


def plan_frame(K_target: int, p: int, rate: float):
    """Pick (info_len, K) so the code-bit count fills K symbols exactly.

    Returns the largest frame with K <= K_target whose post-tail length
    is divisible by the 2p bits per symbol; no padding bits are ever
    inserted.
    """
    per = 2 * p
    mult = 2 if _rate_tag(rate) == "1/2" else 3
    tail = 6
    n = (per * K_target - tail) // mult
    while n > 0 and (mult * n + tail) % per != 0:
        n -= 1
    if n <= 0:
        raise ValueError("K_target too small for one coded frame")
    return n, (mult * n + tail) // per


@dataclass(frozen=True)
class Trellis:
    """Feed-forward tables of the 2^m-state RSC trellis."""

    next_state: np.ndarray     # (S, 2)
    parity: np.ndarray         # (S, 2)
    prev_state: np.ndarray     # (S, 2) incoming states, one per branch j
    prev_input: np.ndarray     # (S, 2) input bit on incoming branch j
    tail_input: np.ndarray     # (S,) input that drives the register to s >> 1
    memory: int

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]


def build_trellis(feedback_poly, feedforward_poly) -> Trellis:
    m = len(feedback_poly) - 1
    S = 2 ** m
    fb = np.array(feedback_poly[1:], dtype=int)
    ff0 = int(feedforward_poly[0])
    ff = np.array(feedforward_poly[1:], dtype=int)

    next_state = np.zeros((S, 2), dtype=int)
    parity = np.zeros((S, 2), dtype=int)
    tail_input = np.zeros(S, dtype=int)
    for s in range(S):
        sbits = np.array([(s >> (m - 1 - i)) & 1 for i in range(m)])
        fb_sum = int(fb @ sbits) & 1
        tail_input[s] = fb_sum
        for u in (0, 1):
            w = u ^ fb_sum
            parity[s, u] = (ff0 * w + int(ff @ sbits)) & 1
            next_state[s, u] = (w << (m - 1)) | (s >> 1)

    prev_state = np.zeros((S, 2), dtype=int)
    prev_input = np.zeros((S, 2), dtype=int)
    fill = np.zeros(S, dtype=int)
    for s in range(S):
        for u in (0, 1):
            ns = next_state[s, u]
            prev_state[ns, fill[ns]] = s
            prev_input[ns, fill[ns]] = u
            fill[ns] += 1
    assert np.all(fill == 2)
    return Trellis(next_state=next_state, parity=parity,
                   prev_state=prev_state, prev_input=prev_input,
                   tail_input=tail_input, memory=m)


def rsc_encode(bits: np.ndarray, trellis: Trellis, terminate: bool):
    """Systematic/parity streams of one RSC; termination appends
    ``memory`` state-driven tail steps so the register ends at zero."""
    bits = np.asarray(bits, dtype=int)
    s = 0
    sys_out = []
    par_out = []
    for u in bits:
        sys_out.append(int(u))
        par_out.append(int(trellis.parity[s, u]))
        s = int(trellis.next_state[s, u])
    if terminate:
        for _ in range(trellis.memory):
            u = int(trellis.tail_input[s])
            sys_out.append(u)
            par_out.append(int(trellis.parity[s, u]))
            s = int(trellis.next_state[s, u])
        assert s == 0
    return np.array(sys_out, dtype=np.int8), np.array(par_out, dtype=np.int8), s


@dataclass(frozen=True)
class CodeBitFrame:
    """Transmitted code bits plus their (symbol, bit-position) map."""

    bits: np.ndarray
    bits_per_symbol: int

    @property
    def K(self) -> int:
        return self.bits.size // self.bits_per_symbol

    def mapping_index(self, j: int):
        """(k, l) position of transmitted code bit j; l is 0-based."""
        return divmod(int(j), self.bits_per_symbol)


@dataclass
class TurboDecoderState:
    """Extrinsic memory carried across turbo iterations."""

    extrinsic_to_second: np.ndarray
    extrinsic_to_first: np.ndarray
    iteration: int = 0


class TurboCodec:
    """Encoder/decoder pair bound to one TurboConfig.

    The multiplex layout (which stream each transmitted position draws
    from, after puncturing and before outer interleaving) is frozen at
    construction so the encoder and decoder can never drift apart.
    """

    def __init__(self, cfg: TurboConfig):
        self.cfg = cfg
        self.trellis = build_trellis(cfg.feedback_poly, cfg.feedforward_poly)
        n = cfg.info_len
        m = self.trellis.memory
        self.inner = np.random.default_rng(cfg.inner_seed).permutation(n)
        # mux tables: kind 0 = systematic (incl. tail), 1 = parity 1
        # (incl. tail parity), 2 = parity 2
        kinds = []
        idxs = []
        half = _rate_tag(cfg.rate) == "1/2"
        for t in range(n):
            kinds.append(0); idxs.append(t)
            if half:
                kinds.append(1 if t % 2 == 0 else 2); idxs.append(t)
            else:
                kinds.append(1); idxs.append(t)
                kinds.append(2); idxs.append(t)
        for t in range(m):
            kinds.append(0); idxs.append(n + t)
            kinds.append(1); idxs.append(n + t)
        self.mux_kind = np.array(kinds, dtype=int)
        self.mux_idx = np.array(idxs, dtype=int)
        self.n_code = self.mux_kind.size
        assert self.n_code == cfg.n_code_bits
        self.outer = np.random.default_rng(cfg.outer_seed).permutation(self.n_code)

    # -- encoding ---------------------------------------------------------

    def encode(self, info_bits: np.ndarray, bits_per_symbol: int) -> CodeBitFrame:
        info_bits = np.asarray(info_bits, dtype=int)
        if info_bits.shape != (self.cfg.info_len,):
            raise ValueError(
                f"expected {self.cfg.info_len} info bits, got {info_bits.shape}")
        if self.n_code % bits_per_symbol != 0:
            raise ValueError("code length not divisible by bits per symbol; "
                             "use plan_frame to size the frame")
        sys1, par1, _ = rsc_encode(info_bits, self.trellis, terminate=True)
        _, par2, _ = rsc_encode(info_bits[self.inner], self.trellis,
                                terminate=False)
        streams = (sys1, par1, par2)
        muxed = np.empty(self.n_code, dtype=np.int8)
        for kind in (0, 1, 2):
            sel = self.mux_kind == kind
            muxed[sel] = streams[kind][self.mux_idx[sel]]
        return CodeBitFrame(bits=muxed[self.outer],
                            bits_per_symbol=bits_per_symbol)

    # -- decoding ---------------------------------------------------------

    def new_state(self) -> TurboDecoderState:
        n = self.cfg.info_len
        return TurboDecoderState(extrinsic_to_second=np.zeros(n),
                                 extrinsic_to_first=np.zeros(n))

    def _demux(self, lam_tx: np.ndarray):
        """Transmitted-order LLRs -> per-stream channel LLRs (punctured
        positions stay at zero)."""
        n = self.cfg.info_len
        m = self.trellis.memory
        muxed = np.empty(self.n_code)
        muxed[self.outer] = lam_tx
        lsys = np.zeros(n + m)
        lp1 = np.zeros(n + m)
        lp2 = np.zeros(n)
        for kind, dest in ((0, lsys), (1, lp1), (2, lp2)):
            sel = self.mux_kind == kind
            dest[self.mux_idx[sel]] = muxed[sel]
        return lsys, lp1, lp2

    def _remux(self, sys_app: np.ndarray, p1_app: np.ndarray,
               p2_app: np.ndarray) -> np.ndarray:
        muxed = np.empty(self.n_code)
        streams = (sys_app, p1_app, p2_app)
        for kind in (0, 1, 2):
            sel = self.mux_kind == kind
            muxed[sel] = streams[kind][self.mux_idx[sel]]
        return muxed[self.outer]

    def iterate(self, lam_tx: np.ndarray, state: TurboDecoderState):
        """One turbo exchange (SISO-1 then SISO-2).

        Parameters
        ----------
        lam_tx : ndarray, shape (n_code,)
            Bit likelihoods of the transmitted code bits, in transmitted
            order (the soft demapper's output).

        Returns
        -------
        upsilon : ndarray, shape (n_code,)
            A-posteriori LLRs of every transmitted code bit.
        state : TurboDecoderState
            Updated extrinsic memory (mutated in place and returned).
        """
        lam_tx = np.asarray(lam_tx, dtype=float)
        if lam_tx.shape != (self.n_code,):
            raise ValueError(f"expected {self.n_code} code-bit LLRs")
        n = self.cfg.info_len
        lsys, lp1, lp2 = self._demux(lam_tx)

        apri1 = np.zeros(n + self.trellis.memory)
        apri1[:n] = state.extrinsic_to_first
        app1, p1_app, tail_sys_app = bcjr_siso(
            lsys, lp1, apri1, self.trellis, terminated=True)
        ext1 = app1[:n] - lsys[:n] - apri1[:n]
        state.extrinsic_to_second = ext1

        apri2 = ext1[self.inner]
        app2, p2_app, _ = bcjr_siso(
            lsys[:n][self.inner], lp2, apri2, self.trellis, terminated=False)
        ext2_perm = app2 - lsys[:n][self.inner] - apri2
        ext2 = np.empty(n)
        ext2[self.inner] = ext2_perm
        state.extrinsic_to_first = ext2
        state.iteration += 1

        sys_app = np.concatenate([lsys[:n] + ext1 + ext2, tail_sys_app])
        return self._remux(sys_app, p1_app, p2_app), state

    def decode_bits(self, state: TurboDecoderState, lam_tx: np.ndarray) -> np.ndarray:
        """Hard information-bit decisions from the current extrinsics."""
        lsys, _, _ = self._demux(np.asarray(lam_tx, dtype=float))
        n = self.cfg.info_len
        app = lsys[:n] + state.extrinsic_to_second + state.extrinsic_to_first
        return (app > 0).astype(np.int8)


def turbo_encode(info_bits, cfg: TurboConfig, bits_per_symbol: int) -> CodeBitFrame:
    """Encode one frame; see TurboCodec.encode."""
    return TurboCodec(cfg).encode(info_bits, bits_per_symbol)


def turbo_iterate(bit_likelihoods, state: TurboDecoderState, codec: TurboCodec):
    """One turbo exchange; see TurboCodec.iterate."""
    return codec.iterate(bit_likelihoods, state)


def bcjr_siso(sys_llr: np.ndarray, par_llr: np.ndarray, apriori: np.ndarray,
              trellis: Trellis, terminated: bool):
    """Exact log-MAP forward/backward pass over one RSC trellis.

    Channel LLRs follow the ln(P[1]/P[0]) convention, so a branch whose
    bit value is b contributes (2b-1)*L/2 to its metric.  For a
    terminated trellis the last ``memory`` steps carry state-driven tail
    bits (no free input, no a-priori term) and the backward recursion is
    pinned to the zero state.

    Returns
    -------
    app_info : (n_info,) a-posteriori LLRs of the free input bits
    app_parity : (n_steps,) a-posteriori LLRs of every parity bit
    app_tail_sys : (memory,) a-posteriori LLRs of the tail systematic bits
        (empty when not terminated)
    """
    def _finite(x):
        return np.nan_to_num(np.asarray(x, dtype=float), nan=0.0,
                             posinf=LLR_MAX, neginf=-LLR_MAX)

    sys_llr = _finite(sys_llr)
    par_llr = _finite(par_llr)
    apriori = _finite(apriori)
    n_steps = sys_llr.size
    if par_llr.size != n_steps or apriori.size != n_steps:
        raise ValueError("sys/parity/a-priori streams must share one length")

    m = trellis.memory
    S = trellis.n_states
    n_info = n_steps - m if terminated else n_steps
    NEG = -np.inf

    u_pm = 2.0 * np.array([0.0, 1.0]) - 1.0                  # (2,)
    p_pm = 2.0 * trellis.parity.astype(float) - 1.0          # (S, 2)
    gs = 0.5 * (sys_llr + apriori)
    gp = 0.5 * par_llr
    # metric[t, s, u]; tail steps keep only the termination branch
    metric = u_pm[None, None, :] * gs[:, None, None] \
        + p_pm[None, :, :] * gp[:, None, None]
    free = np.ones((n_steps, S, 2), dtype=bool)
    if terminated:
        tail_u = trellis.tail_input
        for t in range(n_info, n_steps):
            free[t] = False
            free[t, np.arange(S), tail_u] = True
    metric = np.where(free, metric, NEG)

    alpha = np.empty((n_steps + 1, S))
    alpha[0] = NEG
    alpha[0, 0] = 0.0
    ps, pu = trellis.prev_state, trellis.prev_input
    for t in range(n_steps):
        mt = metric[t]
        a = alpha[t]
        alpha[t + 1] = np.logaddexp(a[ps[:, 0]] + mt[ps[:, 0], pu[:, 0]],
                                    a[ps[:, 1]] + mt[ps[:, 1], pu[:, 1]])
        alpha[t + 1] -= alpha[t + 1].max()

    beta = np.empty((n_steps + 1, S))
    if terminated:
        beta[n_steps] = NEG
        beta[n_steps, 0] = 0.0
    else:
        beta[n_steps] = 0.0
    ns = trellis.next_state
    for t in range(n_steps - 1, -1, -1):
        mt = metric[t]
        b = beta[t + 1]
        beta[t] = np.logaddexp(mt[:, 0] + b[ns[:, 0]],
                               mt[:, 1] + b[ns[:, 1]])
        beta[t] -= beta[t].max()

    # transition posteriors alpha[t, s] + metric[t, s, u] + beta[t+1, ns[s, u]],
    # then bit marginals
    post = alpha[:-1, :, None] + metric \
        + beta[1:][:, ns.reshape(-1)].reshape(n_steps, S, 2)

    def _llr(mask1):
        # no output clamp: posteriors may legitimately exceed the prior
        # clamp, and the a-priori extraction subtracts before clamping
        with np.errstate(invalid="ignore"):
            num = _lse(np.where(mask1, post, NEG))
            den = _lse(np.where(mask1, NEG, post))
        return num - den

    bit1 = np.broadcast_to(np.array([False, True]), (n_steps, S, 2))
    app_input = _llr(bit1)
    app_parity = _llr(np.broadcast_to(trellis.parity.astype(bool), (n_steps, S, 2)))

    app_info = app_input[:n_info]
    if terminated:
        app_tail_sys = app_input[n_info:]
    else:
        app_tail_sys = np.empty(0)
    return app_info, app_parity, app_tail_sys


def _lse(x3):
    """logsumexp over the (state, input) axes of a (T, S, 2) array."""
    flat = x3.reshape(x3.shape[0], -1)
    mx = flat.max(axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    out = safe + np.log(np.exp(flat - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(mx), out, -np.inf)
