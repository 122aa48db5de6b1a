"""Experiment orchestration: NMSE curves, CRLB curves, Fisher validation, BER.

Every experiment is a pure function of its ExperimentConfig, including
the master seed: per-trial random streams are pre-assigned from
(seed, point_index, trial_index), aggregation sorts by trial index
before reducing, and CSV content carries no timestamps -- so identical
configs give byte-identical CSVs at any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from . import __version__
from .constellation import (GrayQam, LlrFrame, build_constellation,
                            clamp_llrs, modulate_bits, soft_demap_frame)
from .crlb import CrlbInputs, ca_crlb, empirical_fisher
from .estimator import SyncConfig, ca_sync_loop, wrap_delay_error
from .turbo import TurboCodec, TurboConfig, plan_frame
from .waveform import PulseBank, add_awgn, matched_filter, synthesize

RATE_NAMES = {"1/2": 0.5, "1/3": 1.0 / 3.0}


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete experiment description; defaults give the desk-scale
    QPSK rate-1/3 setup (see README for the full table)."""

    p: int = 1
    rate: float = 1.0 / 3.0
    rolloff: float = 0.2
    K: int = 400
    snr_db: tuple = (0.0, 2.0, 5.0, 8.0)
    trials: int = 1000
    tau_policy: str = "uniform"          # "uniform" over [0.1T, 0.9T] or "fixed"
    tau_fixed: float = 0.4               # fraction of T, used by "fixed"
    seed: int = 12345
    turbo_iterations: int = 10
    oversampling: int = 8
    span: int = 32
    grid_step: float = 1.0 / 64.0
    epsilon: float = 1e-6
    max_newton_iters: int = 50
    uniform_demap_priors: bool = False
    decoder_exchanges: int = 1
    crlb_frames: int = 25
    fisher_trials: int = 10000
    workers: int = 1
    out_dir: str = "results"
    emit_plot: bool = False

    def __post_init__(self):
        if self.p not in (1, 2, 3, 4):
            raise ConfigError("p must be 1..4")
        if not any(abs(self.rate - r) < 1e-9 for r in RATE_NAMES.values()):
            raise ConfigError("rate must be 1/2 or 1/3")
        if self.tau_policy not in ("uniform", "fixed"):
            raise ConfigError("tau_policy must be 'uniform' or 'fixed'")
        if not 0.0 <= self.tau_fixed < 1.0:
            raise ConfigError("tau_fixed must be in [0, 1) (fraction of T)")
        if self.trials < 1 or self.crlb_frames < 1:
            raise ConfigError("trials and crlb_frames must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def sync_config(self) -> SyncConfig:
        return SyncConfig(grid_step=self.grid_step, epsilon=self.epsilon,
                          max_newton_iters=self.max_newton_iters,
                          turbo_iterations=self.turbo_iterations,
                          uniform_demap_priors=self.uniform_demap_priors,
                          decoder_exchanges=self.decoder_exchanges)


RESULT_COLUMNS = ("snr_db", "nmse_ca", "nmse_nda", "crlb_ca", "crlb_nda",
                  "crlb_da", "trials_used", "mean_newton_iters", "ber_final")


@dataclass(frozen=True)
class ResultRow:
    snr_db: float
    nmse_ca: float
    nmse_nda: float
    crlb_ca: float
    crlb_nda: float
    crlb_da: float
    trials_used: int
    mean_newton_iters: float
    ber_final: float


def parse_config_text(text: str) -> ExperimentConfig:
    """key = value lines -> ExperimentConfig; unknown keys are rejected."""
    spec = {f.name: f for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in spec:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val, spec[key].type)
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse_value(key, val, ftype):
    if key == "rate":
        if val in RATE_NAMES:
            return RATE_NAMES[val]
        return float(val)
    if key == "snr_db":
        return tuple(float(x) for x in val.split(",") if x.strip())
    if ftype in ("int", int):
        return int(val)
    if ftype in ("float", float):
        if "/" in val:
            num, den = val.split("/")
            return float(num) / float(den)
        return float(val)
    if ftype in ("bool", bool):
        if val.lower() in ("true", "1", "yes", "on"):
            return True
        if val.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {key}: {val!r}")
    return val


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# -- shared experiment plumbing -------------------------------------------


@lru_cache(maxsize=8)
def _components_cached(p, rolloff, span, Q, K_target, rate, iterations):
    spec = build_constellation(p)
    pulses = PulseBank(rolloff=rolloff, T=1.0, span=span, Q=Q)
    info_len, K = plan_frame(K_target, p, rate)
    codec = TurboCodec(TurboConfig(info_len=info_len, rate=rate,
                                   iterations=iterations))
    return spec, pulses, codec, info_len, K


def _components(cfg: ExperimentConfig):
    """(spec, pulses, codec, info_len, K) derived from the config.

    Cached per process; every returned object is immutable or stateless
    across trials.
    """
    return _components_cached(cfg.p, cfg.rolloff, cfg.span, cfg.oversampling,
                              cfg.K, cfg.rate, cfg.turbo_iterations)


def _trial_rng(cfg: ExperimentConfig, point: int, trial: int, stream: int = 0):
    return np.random.default_rng(
        np.random.SeedSequence([cfg.seed, stream, point, trial]))


def _draw_tau(cfg: ExperimentConfig, rng, T: float) -> float:
    if cfg.tau_policy == "fixed":
        return cfg.tau_fixed * T
    return rng.uniform(0.1, 0.9) * T


def _make_frame(cfg, spec, pulses, codec, info_len, rng, snr_db):
    rho = 10.0 ** (snr_db / 10.0)
    Es = 1.0
    sigma2 = Es / (2.0 * rho)
    info = rng.integers(0, 2, info_len)
    symbols = modulate_bits(codec.encode(info, spec.bits_per_symbol).bits, spec)
    tau = _draw_tau(cfg, rng, pulses.T)
    signal = add_awgn(synthesize(symbols, tau, pulses, Es), sigma2, rng)
    return info, symbols, tau, signal, Es, sigma2


def decode_at_delay(signal, codec: TurboCodec, spec: GrayQam,
                    pulses: PulseBank, Es: float, sigma2: float,
                    iterations: int, uniform_priors: bool = False):
    """Genie-synchronized decode: matched filter once at the true delay,
    then iterate demapper and decoder to a steady state.

    Returns (priors LlrFrame, decoder state, last bit likelihoods); the
    priors are the converged per-bit LLRs the CRLB protocol evaluates
    the bounds with.
    """
    mo = matched_filter(signal, signal.true_tau, pulses)
    priors = LlrFrame.zeros(signal.K, spec.p)
    state = codec.new_state()
    lam_flat = None
    for _ in range(iterations):
        lam = soft_demap_frame(mo.y, priors, spec, Es, sigma2,
                               uniform_other_priors=uniform_priors)
        lam_flat = lam.reshape(-1)
        upsilon, state = codec.iterate(lam_flat, state)
        priors = LlrFrame(clamp_llrs(upsilon - lam_flat)
                          .reshape(signal.K, spec.bits_per_symbol))
    return priors, state, lam_flat


def _crlb_for_point(cfg: ExperimentConfig, point: int, snr_db: float):
    """Frame-averaged (crlb_ca, crlb_nda, crlb_da, ber) at one SNR,
    with priors taken from genie-synchronized decoding."""
    spec, pulses, codec, info_len, K = _components(cfg)
    rho = 10.0 ** (snr_db / 10.0)
    cas, ndas, das, bers = [], [], [], []
    for f in range(cfg.crlb_frames):
        rng = _trial_rng(cfg, point, f, stream=1)
        info, symbols, tau, signal, Es, sigma2 = _make_frame(
            cfg, spec, pulses, codec, info_len, rng, snr_db)
        priors, state, lam_flat = decode_at_delay(
            signal, codec, spec, pulses, Es, sigma2, cfg.turbo_iterations,
            cfg.uniform_demap_priors)
        report = ca_crlb(CrlbInputs(frame=priors, spec=spec, rho=rho,
                                    pulses=pulses, symbols=symbols))
        cas.append(report.crlb_ca)
        ndas.append(report.crlb_nda)
        das.append(report.crlb_da)
        bers.append(float(np.mean(codec.decode_bits(state, lam_flat) != info)))
    return (float(np.mean(cas)), float(np.mean(ndas)), float(np.mean(das)),
            float(np.mean(bers)))


def _nmse_trial(cfg: ExperimentConfig, point: int, trial: int, snr_db: float):
    """One Monte-Carlo trial: returns (err_ca, err_nda, newton_iters,
    ber, converged), errors as fractions of T."""
    spec, pulses, codec, info_len, K = _components(cfg)
    rng = _trial_rng(cfg, point, trial, stream=0)
    info, symbols, tau, signal, Es, sigma2 = _make_frame(
        cfg, spec, pulses, codec, info_len, rng, snr_db)
    sync = cfg.sync_config()
    tau_hat, trace, decoded = ca_sync_loop(signal, codec, spec, pulses,
                                           sync, Es, sigma2, info_bits=info)
    T = pulses.T
    err_ca = float(wrap_delay_error(tau_hat - tau, T)) / T
    err_nda = float(wrap_delay_error(trace.nda_tau - tau, T)) / T
    iters = [trace.nda_result.iterations] + [s.newton_iters for s in trace.steps]
    ber = trace.steps[-1].ber if trace.steps else float("nan")
    return err_ca, err_nda, float(np.mean(iters)), ber, trace.converged


def _nmse_worker(args):
    cfg_values, point, trials, snr_db = args
    cfg = ExperimentConfig(**cfg_values)
    return [(t,) + _nmse_trial(cfg, point, t, snr_db) for t in trials]


def _run_point_trials(cfg: ExperimentConfig, point: int, snr_db: float):
    """All trials of one SNR point, optionally across worker processes;
    the result list is sorted by trial index so reductions are
    order-independent."""
    trial_ids = list(range(cfg.trials))
    if cfg.workers == 1:
        records = [(t,) + _nmse_trial(cfg, point, t, snr_db) for t in trial_ids]
    else:
        cfg_values = {f.name: getattr(cfg, f.name)
                      for f in fields(ExperimentConfig)}
        chunks = [trial_ids[i::cfg.workers] for i in range(cfg.workers)]
        args = [(cfg_values, point, chunk, snr_db) for chunk in chunks if chunk]
        records = []
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for part in pool.map(_nmse_worker, args):
                records.extend(part)
    records.sort(key=lambda r: r[0])
    return records


class ConvergenceAbort(RuntimeError):
    """More than 1% of trials failed to converge at some SNR point."""

    def __init__(self, snr_db, failure_rate, rows):
        super().__init__(f"SNR {snr_db} dB aborted: "
                         f"{failure_rate:.2%} of trials failed to converge")
        self.snr_db = snr_db
        self.failure_rate = failure_rate
        self.rows = rows


def run_nmse(cfg: ExperimentConfig, with_crlb: bool = True):
    """NMSE-versus-SNR experiment; returns the ResultRow list.

    Raises ConvergenceAbort (carrying the rows finished so far) when a
    point's non-convergence rate exceeds 1%.
    """
    rows = []
    for point, snr_db in enumerate(cfg.snr_db):
        records = _run_point_trials(cfg, point, snr_db)
        err_ca = np.array([r[1] for r in records])
        err_nda = np.array([r[2] for r in records])
        iters = np.array([r[3] for r in records])
        bers = np.array([r[4] for r in records], dtype=float)
        conv = np.array([r[5] for r in records], dtype=bool)
        failure_rate = 1.0 - conv.mean()
        if with_crlb:
            crlb_ca, crlb_nda, crlb_da, _ = _crlb_for_point(cfg, point, snr_db)
        else:
            crlb_ca = crlb_nda = crlb_da = float("nan")
        row = ResultRow(snr_db=snr_db,
                        nmse_ca=float(np.mean(err_ca ** 2)),
                        nmse_nda=float(np.mean(err_nda ** 2)),
                        crlb_ca=crlb_ca, crlb_nda=crlb_nda, crlb_da=crlb_da,
                        trials_used=int(conv.sum()),
                        mean_newton_iters=float(iters.mean()),
                        ber_final=float(np.nanmean(bers)))
        rows.append(row)
        if failure_rate > 0.01:
            raise ConvergenceAbort(snr_db, failure_rate, rows)
    return rows


def run_ber(cfg: ExperimentConfig):
    """BER sanity sweep: the NMSE loop without the CRLB columns."""
    return run_nmse(cfg, with_crlb=False)


def run_validate(cfg: ExperimentConfig):
    """Run the invariant battery; returns (checks, all_passed)."""
    from .validate import run_all

    checks = run_all(seed=cfg.seed)
    return checks, all(c.passed for c in checks)


def run_crlb(cfg: ExperimentConfig):
    """Closed-form bound curves from genie-synchronized decoder priors."""
    rows = []
    for point, snr_db in enumerate(cfg.snr_db):
        crlb_ca, crlb_nda, crlb_da, ber = _crlb_for_point(cfg, point, snr_db)
        rows.append(ResultRow(snr_db=snr_db, nmse_ca=float("nan"),
                              nmse_nda=float("nan"), crlb_ca=crlb_ca,
                              crlb_nda=crlb_nda, crlb_da=crlb_da,
                              trials_used=cfg.crlb_frames,
                              mean_newton_iters=float("nan"),
                              ber_final=ber))
    return rows


def run_fisher_validation(cfg: ExperimentConfig):
    """Closed-form versus empirical Fisher information per SNR point.

    Returns a list of dicts (snr_db, fisher_closed, fisher_empirical,
    fisher_se, rel_err); priors come from one genie-decoded frame.
    """
    spec, pulses, codec, info_len, K = _components(cfg)
    out = []
    for point, snr_db in enumerate(cfg.snr_db):
        rho = 10.0 ** (snr_db / 10.0)
        rng = _trial_rng(cfg, point, 0, stream=2)
        info, symbols, tau, signal, Es, sigma2 = _make_frame(
            cfg, spec, pulses, codec, info_len, rng, snr_db)
        priors, _, _ = decode_at_delay(signal, codec, spec, pulses, Es,
                                       sigma2, cfg.turbo_iterations,
                                       cfg.uniform_demap_priors)
        inputs = CrlbInputs(frame=priors, spec=spec, rho=rho, pulses=pulses)
        closed = ca_crlb(inputs).fisher_ca
        emp, se, _ = empirical_fisher(inputs, cfg.fisher_trials,
                                      rng=_trial_rng(cfg, point, 1, stream=2),
                                      tau=tau)
        out.append({"snr_db": snr_db, "fisher_closed": closed,
                    "fisher_empirical": emp, "fisher_se": se,
                    "rel_err": (closed - emp) / closed})
    return out


# -- CSV / plot emission ----------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def config_lines(cfg: ExperimentConfig):
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        yield f"# {f.name} = {v}"


def rows_to_csv(cfg: ExperimentConfig, rows, columns=RESULT_COLUMNS) -> str:
    lines = [f"# turbosync {__version__}"]
    lines.extend(config_lines(cfg))
    lines.append(",".join(columns))
    for row in rows:
        get = (lambda c: row[c]) if isinstance(row, dict) \
            else (lambda c: getattr(row, c))
        lines.append(",".join(_fmt(get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def write_results(cfg: ExperimentConfig, experiment: str, rows,
                  columns=RESULT_COLUMNS, timestamp: str | None = None) -> str:
    """Write the CSV (and optionally a gnuplot script) into out_dir;
    returns the CSV path.  File content is timestamp-free."""
    import datetime

    os.makedirs(cfg.out_dir, exist_ok=True)
    if timestamp is None:
        timestamp = datetime.datetime.now(datetime.timezone.utc)\
            .strftime("%Y%m%dT%H%M%SZ")
    path = os.path.join(cfg.out_dir, f"{experiment}-{timestamp}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(cfg, rows, columns))
    if cfg.emit_plot:
        _write_plot_script(path, experiment, columns)
    return path


def _write_plot_script(csv_path: str, experiment: str, columns) -> str:
    """Standalone gnuplot script rendering the curves next to the CSV."""
    base = os.path.splitext(csv_path)[0]
    ycols = [c for c in ("nmse_ca", "nmse_nda", "crlb_ca", "crlb_nda",
                         "crlb_da", "fisher_closed", "fisher_empirical")
             if c in columns]
    idx = {c: i + 1 for i, c in enumerate(columns)}
    plots = ", \\\n     ".join(
        f"'{os.path.basename(csv_path)}' using 1:{idx[c]} with linespoints title '{c}'"
        for c in ycols)
    script = "\n".join([
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set logscale y",
        "set xlabel 'SNR (dB)'",
        f"set ylabel '{experiment} (normalized by T^2)'",
        "set grid",
        f"set output '{os.path.basename(base)}.svg'",
        "set terminal svg size 900,600",
        f"plot {plots}",
        "",
    ])
    path = base + ".gp"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(script)
    return path
