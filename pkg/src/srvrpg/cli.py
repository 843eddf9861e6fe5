"""Command line entry point: ``run``, ``sweep``, ``verify`` and ``presets``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import ConfigError, load_config, parse_values, preset_names, preset_text, run_experiment, sweep


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    p = argparse.ArgumentParser(prog="srvrpg", description="Variance-reduced policy gradient experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True, help="config file or preset name")
    run.add_argument("--seed", type=_u64, help="override master_seed")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--jobs", type=int, default=1, help="seeds run in parallel")

    sw = sub.add_parser("sweep", help="repeat an experiment over a list of values")
    sw.add_argument("--config", required=True, help="config file or preset name")
    sw.add_argument("--param", required=True, choices=("B", "eta", "N", "m"))
    sw.add_argument("--values", required=True, help="comma separated, e.g. 10,50,100")
    sw.add_argument("--seed", type=_u64, help="override master_seed")
    sw.add_argument("--out", help="output directory (overrides the config)")
    sw.add_argument("--jobs", type=int, default=1)

    ver = sub.add_parser("verify", help="run the acceptance checks and print a pass/fail table")
    ver.add_argument("--quick", action="store_true", help="skip the two multi-minute learning checks")
    ver.add_argument("--jobs", type=int, default=1)

    pre = sub.add_parser("presets", help="list shipped configs")
    pre.add_argument("--show", metavar="NAME", help="print one preset")
    return p


def _report(rep) -> int:
    for path in (rep.raw_path, rep.aggregate_path, rep.plot_path):
        if path is not None:
            print(f"wrote {path}")
    for seed, why in rep.truncated:
        print(f"seed {seed} truncated: {why}", file=sys.stderr)
    return 0 if rep.ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            if args.show:
                if args.show not in preset_names():
                    raise ConfigError(f"unknown preset {args.show!r}")
                print(preset_text(args.show), end="")
            else:
                print("\n".join(preset_names()))
            return 0
        if args.command == "verify":
            from .verify import run_all

            results = run_all(quick=args.quick, jobs=args.jobs)
            failed = [r.key for r in results if not r.passed]
            print(f"{len(results) - len(failed)}/{len(results)} passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
            return 1 if failed else 0
        cfg = load_config(args.config, master_seed=args.seed)
        if args.command == "run":
            return _report(run_experiment(cfg, args.out, jobs=args.jobs))
        values = parse_values(args.param, args.values)
        reports = sweep(cfg, args.param, values, args.out, jobs=args.jobs)
        return max(_report(r) for r in reports.values())
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
