"""Command-line entry point: run, sweep, certify, ingest."""

from __future__ import annotations

import argparse
import sys

from .config import apply_overrides, load_config
from .harness import certify, ingest_to_csv, run_experiment, sweep


def _add_common(sub):
    sub.add_argument("--config", required=True, help="experiment config file")
    sub.add_argument("--alpha", type=float, default=None, help="override step-size")
    sub.add_argument("--seeds", default=None, help="override seed list, e.g. 1,2,3")
    sub.add_argument("--out", default=None, help="override output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sabtv",
        description="Distributed stochastic gradient tracking over time-varying digraphs")
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="execute the configured algorithm over all seeds")
    _add_common(p_run)

    p_sweep = subs.add_parser("sweep", help="run once per parameter value and collate plateaus")
    _add_common(p_sweep)
    p_sweep.add_argument("--parameter", required=True,
                         choices=("alpha", "sigma", "agents", "extra_edges"))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")

    p_cert = subs.add_parser("certify", help="measure constants and evaluate the certificate")
    _add_common(p_cert)

    p_ingest = subs.add_parser("ingest", help="materialize the configured dataset as CSV")
    _add_common(p_ingest)

    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, alpha=args.alpha, seeds=args.seeds, out=args.out)

    if args.command == "run":
        result = run_experiment(cfg)
        final = result.series.mean[-1, 0]
        print(f"wrote {result.directory}")
        print(f"alpha={result.alpha!r} final_gap={final!r}")
    elif args.command == "sweep":
        values = [v for v in args.values.replace(",", " ").split()]
        path = sweep(cfg, args.parameter, values)
        print(f"wrote {path}")
    elif args.command == "certify":
        result = certify(cfg)
        verdict = "pass" if (result.certificate.passed and result.rho < 1.0) else "fail"
        print(f"wrote {result.report_path}")
        print(f"alpha={result.alpha!r} bound={result.bound!r} rho={result.rho!r} certificate={verdict}")
    elif args.command == "ingest":
        out = ingest_to_csv(cfg)
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
