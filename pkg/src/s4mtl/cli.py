"""Command line: ``s4mtl {validate,run,report,synth}``.

Exit codes: 0 success, 1 configuration or input error, 2 some runs failed.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .data import DatasetError, make_synthetic, save_dataset
from .experiment import ConfigError, run, validate
from .report import build_report


def _validate(args) -> int:
    print(validate(args.config))
    return 0


def _run(args) -> int:
    summary = run(args.config, force=args.force, resume=args.resume)
    print(f"completed {len(summary.completed)}, skipped {len(summary.skipped)}, failed {len(summary.failed)}")
    for rid, msg in sorted(summary.failed.items()):
        print(f"  FAILED {rid}: {msg}", file=sys.stderr)
    return summary.exit_code


def _report(args) -> int:
    try:
        res = build_report(args.results, args.out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in res["paths"]:
        print(p)
    if res["missing"]:
        print("missing runs: " + ", ".join(res["missing"]), file=sys.stderr)
        return 2
    return 0


def _synth(args) -> int:
    samples = make_synthetic(args.count, args.side, args.classes, args.seed)
    save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="s4mtl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=_validate)

    r = sub.add_parser("run", help="run every configured training run")
    r.add_argument("config")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--force", action="store_true", help="replace existing run directories")
    g.add_argument("--resume", action="store_true", help="skip runs that already finished")
    r.set_defaults(func=_run)

    rep = sub.add_parser("report", help="tables and figures from a results directory")
    rep.add_argument("results")
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=_report)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("count", type=int)
    s.add_argument("side", type=int)
    s.add_argument("seed", type=int)
    s.add_argument("out")
    s.add_argument("--classes", type=int, default=2)
    s.set_defaults(func=_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
