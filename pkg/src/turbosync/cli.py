"""Command-line entry points: crlb, nmse, ber, validate.

Exit codes: 0 success, 1 configuration error, 2 validation failure,
3 convergence-rate abort.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import harness
from .harness import (ConfigError, ConvergenceAbort, ExperimentConfig,
                      RESULT_COLUMNS, load_config)

FISHER_COLUMNS = ("snr_db", "fisher_closed", "fisher_empirical", "fisher_se",
                  "rel_err")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turbosync",
        description="Code-aided timing recovery experiments for "
                    "turbo-coded square QAM")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("crlb", "closed-form CRLB curves from decoder-converged priors"),
            ("nmse", "Monte-Carlo NMSE curves for the CA and NDA estimators"),
            ("ber", "BER sanity sweep through the full sync loop"),
            ("validate", "run the invariant battery and report pass/fail")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--out-dir", help="output directory override")
        sp.add_argument("--trials", type=int, help="Monte-Carlo trials override")
        sp.add_argument("--snr", help="comma-separated SNR grid (dB) override")
        sp.add_argument("--emit-plot", action="store_true",
                        help="write a gnuplot script beside the CSV")
        if name == "crlb":
            sp.add_argument("--validate", action="store_true",
                            dest="fisher_validate",
                            help="also compare the closed-form Fisher "
                                 "information with its empirical estimate")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.trials is not None:
        overrides["trials"] = args.trials
        overrides["crlb_frames"] = min(cfg.crlb_frames, args.trials)
    if args.snr is not None:
        overrides["snr_db"] = tuple(float(x) for x in args.snr.split(","))
    if args.emit_plot:
        overrides["emit_plot"] = True
    return replace(cfg, **overrides) if overrides else cfg


def _print_rows(rows, columns):
    print(" | ".join(f"{c:>14s}" for c in columns))
    for row in rows:
        get = (lambda c: row[c]) if isinstance(row, dict) \
            else (lambda c: getattr(row, c))
        print(" | ".join(f"{get(c):14.6g}" for c in columns))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if args.command == "validate":
        checks, ok = harness.run_validate(cfg)
        for chk in checks:
            print(chk.line())
        passed = sum(c.passed for c in checks)
        print(f"{passed}/{len(checks)} checks passed")
        return 0 if ok else 2

    try:
        if args.command == "nmse":
            rows = harness.run_nmse(cfg)
            path = harness.write_results(cfg, "nmse", rows)
        elif args.command == "ber":
            rows = harness.run_ber(cfg)
            path = harness.write_results(cfg, "ber", rows)
        else:
            rows = harness.run_crlb(cfg)
            path = harness.write_results(cfg, "crlb", rows)
            if args.fisher_validate:
                frows = harness.run_fisher_validation(cfg)
                fpath = harness.write_results(cfg, "crlb-validation", frows,
                                              columns=FISHER_COLUMNS)
                _print_rows(frows, FISHER_COLUMNS)
                print(f"fisher validation written to {fpath}")
    except ConvergenceAbort as abort:
        harness.write_results(cfg, args.command, abort.rows)
        print(f"aborted: {abort}", file=sys.stderr)
        return 3

    _print_rows(rows, RESULT_COLUMNS)
    print(f"results written to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
