"""``respo`` command line: run experiments, the acceptance suite and oracle exports."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from respo.harness.config import OUTPUT_ROOT_ENV, ConfigError
from respo.harness.runner import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_OK

log = logging.getLogger("respo")


def _under_root(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / p if root and not p.is_absolute() else p


def _run(args) -> int:
    from respo.harness.runner import run_experiment

    report = run_experiment(args.config)
    for path in report.seed_files:
        print(path)
    print(report.aggregate_file)
    if report.status == EXIT_DIVERGENCE:
        print(f"diverged seeds: {report.diverged_seeds}", file=sys.stderr)
    return report.status


def _accept(args) -> int:
    from respo.harness.acceptance import run_acceptance_suite

    out = _under_root(args.out)
    report = run_acceptance_suite(args.tier, out_dir=out, echo=print)
    print(f"report: {out / f'acceptance_{args.tier}.json'}")
    if not report.passed:
        print(f"failed criteria: {', '.join(map(str, report.failures))}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def _export(args) -> int:
    from respo.harness.runner import export_feasible_set

    try:
        path = export_feasible_set(args.env, args.resolution, _under_root(args.out), preset=args.preset)
    except MemoryError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(path)
    return EXIT_OK


def _oracle(args) -> int:
    from respo.mdp import FiniteMdp
    from respo.oracle import solve

    try:
        mdp = FiniteMdp.load(args.mdp_file)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load {args.mdp_file}: {exc}") from exc
    out = _under_root(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    solve(mdp).to_csv(out)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="respo", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="train every seed of a config and write metric CSVs")
    p.add_argument("config")
    p.set_defaults(fn=_run)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("tier", choices=("fast", "full"))
    p.add_argument("--out", default="acceptance", help=f"report directory (relative to ${OUTPUT_ROOT_ENV})")
    p.set_defaults(fn=_accept)

    p = sub.add_parser("export-feasible", help="per-cell optimal REF and feasible flag as CSV")
    p.add_argument("env", choices=("gridworld", "double_integrator"))
    p.add_argument("resolution", type=int)
    p.add_argument("out")
    p.add_argument("--preset", default="hazard5", help="gridworld preset")
    p.set_defaults(fn=_export)

    p = sub.add_parser("oracle", help="solve an MDP file exactly and write per-state values")
    p.add_argument("mdp_file")
    p.add_argument("out")
    p.set_defaults(fn=_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
