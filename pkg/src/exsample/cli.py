"""Command line: ``exsample {simulate,validate-estimator,optimal,report}``.

Exit codes: 0 success, 2 configuration or input error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .core import InvalidArgumentError, InvariantViolation
from . import experiments as ex

log = logging.getLogger("exsample")

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3


def _overrides(args) -> dict:
    threads = args.threads
    if threads is None and os.environ.get("EXSAMPLE_THREADS"):
        try:
            threads = int(os.environ["EXSAMPLE_THREADS"])
        except ValueError:
            raise ex.ConfigError("EXSAMPLE_THREADS must be an integer") from None
    return {"seed": args.seed, "threads": threads}


def _out_dir(args, cfg) -> Path:
    return Path(args.out or os.environ.get("EXSAMPLE_OUT") or cfg.out)


def _config(args):
    return ex.load_config(args.config, **_overrides(args))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    results = ex.simulate(cfg, out)
    log.info("simulated %d cells into %s", len(results), out)
    return EXIT_OK


def cmd_validate_estimator(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    rows = ex.validate_estimator(cfg)
    ok = ex.write_validation(cfg, rows, out)
    for gate in ex.estimator_gates(cfg, rows):
        name, n, stat, thr, passed = gate
        print(f"{'PASS' if passed else 'FAIL'} {name} n={n} statistic={stat:.6g} threshold={thr:.6g}")
    print(f"gates {'all passed' if ok else 'FAILED'}; wrote {out}")
    return EXIT_OK


def cmd_optimal(args) -> int:
    cfg = _config(args)
    if args.horizons:
        try:
            cfg.horizons = tuple(int(x) for x in args.horizons.split(","))
        except ValueError:
            raise ex.ConfigError("--horizons expects a comma separated list of integers") from None
    if args.chunks:
        try:
            cfg.chunks = tuple(int(x) for x in args.chunks.split(","))
        except ValueError:
            raise ex.ConfigError("--chunks expects a comma separated list of integers") from None
    dataset = None
    if args.dataset:
        from .simulation import load_spans

        dataset = load_spans(args.dataset)
    out = _out_dir(args, cfg)
    rows, _ = ex.optimal_sweep(cfg, out, dataset)
    for m, n, nstar, uni, it, gap, conv in rows:
        flag = "" if conv else "  (not converged)"
        print(f"M={m} n={n} N*={nstar:.4f} uniform={uni:.4f}{flag}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out) if args.out else None
    rep = ex.report(args.run_dir, out)
    for row in rep["savings"]:
        skew, dur, method, r, med, sv = row
        print(f"skew={skew} duration={dur} recall={r} {method}: median={ex._fmt(med) or '-'} "
              f"savings={ex._fmt(sv) or '-'}")
    for key, (ns, nstar, med, gap) in rep["gaps"].items():
        k = int(gap.argmax())
        print(f"{key}: gap peaks at n={int(ns[k])} ({gap[k]:.3f} instances)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exsample", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="INI configuration file")
        p.add_argument("--out", help="output directory (overrides config and EXSAMPLE_OUT)")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")

    p = sub.add_parser("simulate", help="run the method grid on synthetic span datasets")
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("validate-estimator", help="Monte Carlo check of the N1/n estimator")
    common(p)
    p.set_defaults(fn=cmd_validate_estimator)

    p = sub.add_parser("optimal", help="optimal-allocation upper bound per horizon")
    common(p)
    p.add_argument("--dataset", help="spans file (default: generated from the config)")
    p.add_argument("--horizons", help="comma separated sample counts")
    p.add_argument("--chunks", help="comma separated chunk counts")
    p.set_defaults(fn=cmd_optimal)

    p = sub.add_parser("report", help="savings table and gap-to-optimal from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out", help="report directory (default: <run_dir>/report)")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except InvariantViolation as exc:
        print(f"exsample: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InvalidArgumentError, OSError) as exc:
        print(f"exsample: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
