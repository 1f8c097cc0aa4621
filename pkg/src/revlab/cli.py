"""Command-line entry point: ``lab run | verify-lemmas | report | dataset``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, parse_config, with_overrides
from .datasets import (DatasetError, build_bilinear_pairs, build_cot3, build_four_token, build_reversal3,
                       dumps_dataset, load_dataset)
from .lemmas import lemma_suite
from .numerics import Rng
from .runner import regenerate_plots, run_experiment

log = logging.getLogger("revlab")


def _print_checks(checks, required_of):
    for c in checks:
        flag = "PASS" if c.passed else "FAIL"
        tag = "" if required_of(c) else " (info)"
        print(f"  [{flag}] {c.name}{tag}")


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed, out_dir=args.out)
    art = run_experiment(cfg)
    print(f"{cfg.kind} seed={cfg.seed} config_hash={art.config_hash[:10]} -> {art.out_dir}")
    _print_checks(art.checks, art.is_required)
    return 0 if art.passed else 1


def cmd_verify_lemmas(args) -> int:
    rep = lemma_suite(args.seed, orthonormal_d=args.d, trials=args.trials)
    text = json.dumps(rep, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    for c in rep["checks"]:
        print(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['name']}")
    return 0 if rep["passed"] else 1


def cmd_report(args) -> int:
    for p in regenerate_plots(args.run):
        print(p)
    return 0


BUILDERS = {
    "reversal3": lambda a, r: build_reversal3(a.m, a.pairs, a.test // 2, a.test - a.test // 2, r),
    "cot3": lambda a, r: build_cot3(a.m, a.pairs, a.test, r),
    "four_token": lambda a, r: build_four_token(a.m, a.pairs, a.test, r),
    "bilinear": lambda a, r: build_bilinear_pairs(a.m, a.pairs, a.d, r),
}


def cmd_dataset(args) -> int:
    if args.inspect:
        ds = load_dataset(args.inspect)
        print(f"kind={ds.kind} train={len(ds.train)} test={len(ds.test)}")
        for s in ds.test[: args.show]:
            print("  test", list(s))
        return 0
    if args.kind is None:
        raise DatasetError("--kind is required unless --inspect is given")
    # same substream a run with this seed would use
    ds = BUILDERS[args.kind](args, Rng(args.seed).substream("dataset"))
    text = dumps_dataset(ds)
    if args.out:
        Path(args.out).write_text(text)
        print(f"{ds.kind}: {len(ds.train)} train / {len(ds.test)} test -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one configured experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (default: $LAB_OUT_DIR or runs/)")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify-lemmas", help="run the concentration / ODE / initialization checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--d", type=int, help="override the orthonormality embedding dimension")
    v.add_argument("--trials", type=int, default=100_000, help="Monte-Carlo trials for the tail check")
    v.add_argument("--out", help="write the JSON report here")
    v.set_defaults(fn=cmd_verify_lemmas)

    rp = sub.add_parser("report", help="regenerate SVG plots from a run's curves.csv")
    rp.add_argument("--run", required=True)
    rp.set_defaults(fn=cmd_report)

    d = sub.add_parser("dataset", help="build or inspect a dataset file")
    d.add_argument("--kind", choices=sorted(BUILDERS))
    d.add_argument("--m", type=int, default=800, help="vocabulary size (bilinear: number of tokens)")
    d.add_argument("--pairs", type=int, default=140, help="training pairs (bilinear: n)")
    d.add_argument("--test", type=int, default=60, help="held-out pairs")
    d.add_argument("--d", type=int, default=512, help="embedding dimension (bilinear only)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    d.add_argument("--inspect", metavar="FILE")
    d.add_argument("--show", type=int, default=5)
    d.set_defaults(fn=cmd_dataset)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, DatasetError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
