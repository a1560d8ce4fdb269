"""``loss-lab`` command line."""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import KINDS, ConfigError, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loss-lab", description="Loss-function rate experiments on tabular decision problems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment from a JSON config")
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--trials", type=int, help="trials per sweep value (overrides the config)")
        p.add_argument("--threads", type=int, help="worker processes (overrides the config)")
        p.add_argument("--emit-summary", action="store_true", help="write <kind>.summary.json next to the CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, output=args.out, trials=args.trials, threads=args.threads)
    except ConfigError as e:
        print(json.dumps({"error": "invalid config", "details": e.errors}), file=sys.stderr)
        return 2
    except OSError as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 2
    if cfg.experiment != args.command:
        print(json.dumps({"error": "invalid config", "details": [{"loc": "experiment", "msg": f"config is for {cfg.experiment}, not {args.command}"}]}), file=sys.stderr)
        return 2
    summary = run_experiment(cfg, emit_summary=args.emit_summary)
    for c in summary["assertions"]:
        tag = "PASS" if c["passed"] else ("INFO" if c["report_only"] else "FAIL")
        print(f"{tag} {c['kind']} loss={c['loss']} observed={c.get('observed')}")
    for loss, fit in summary["rate_fits"].items():
        if "slope" in fit:
            print(f"rate {loss}: slope={fit['slope']:.3f} r2={fit['r_squared']:.3f}")
    if summary["error"]:
        print(f"error: {summary['error']}", file=sys.stderr)
    print(f"csv: {summary['csv_path']}")
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
