"""Command-line entry point: ``triadic {run,scan,threshold,oracle,collapse}``."""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

from . import harness
from .exceptions import TriadicError


def _common(p: argparse.ArgumentParser, multi_n: bool = False) -> None:
    if multi_n:
        p.add_argument("--n", type=int, nargs="+", required=True, help="instance sizes")
    else:
        p.add_argument("--n", type=int, required=True, help="number of vertices")
    p.add_argument("--seed", type=int, default=0, help="oracle seed (master seed for scans)")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--mode", choices=harness.MODES, default="full")
    p.add_argument("--checkpoint-interval", type=int, default=None, help="phase-1 steps between checkpoints")
    p.add_argument("--monitored-pairs", type=int, default=20)
    p.add_argument("--max-rounds", type=int, default=None)


def _prob(p: argparse.ArgumentParser, multi_c: bool = False) -> None:
    g = p.add_mutually_exclusive_group()
    if multi_c:
        g.add_argument("--c", type=float, nargs="+", help="p = c / sqrt(n)")
    else:
        g.add_argument("--c", type=float, help="p = c / sqrt(n)")
    g.add_argument("--p", type=str, help="explicit triple probability (fractions such as 1/2 allowed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triadic", description="Triadic process on random 3-uniform hypergraphs")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one run with checkpoints and trajectory comparison")
    _common(run)
    _prob(run)
    run.add_argument("--horizon", type=float, default=None, help="phase-1 horizon T in units of n^2 steps")

    scan = sub.add_parser("scan", help="propagation frequency over a grid of (n, c)")
    _common(scan, multi_n=True)
    _prob(scan, multi_c=True)

    thr = sub.add_parser("threshold", help="bisection for the propagation threshold in c")
    _common(thr, multi_n=True)
    thr.add_argument("--c-lo", type=float, default=0.2)
    thr.add_argument("--c-hi", type=float, default=1.0)
    thr.add_argument("--tol", type=float, default=0.05)

    orc = sub.add_parser("oracle", help="exact propagation probability for n <= 6")
    orc.add_argument("--n", type=int, required=True)
    orc.add_argument("--p", type=str, required=True)

    col = sub.add_parser("collapse", help="certificate extraction, verification and greedy collapse")
    _common(col)
    _prob(col)
    return parser


def _parse_p(text):
    if text is None:
        return None
    return Fraction(text) if "/" in text else float(text)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            p = _parse_p(args.p)
            cfg = harness.RunConfig(
                n=args.n,
                c=args.c,
                p=None if p is None else float(p),
                seed=args.seed,
                mode=args.mode,
                horizon=args.horizon,
                checkpoint_interval=args.checkpoint_interval,
                monitored_pairs=args.monitored_pairs,
                max_rounds=args.max_rounds,
                out_dir=args.out_dir,
            )
            _emit(harness._report_dict(harness.cmd_run(cfg)))
        elif args.command == "scan":
            if args.c is None:
                raise SystemExit("scan needs --c values")
            cfg = harness.ScanConfig(
                n_values=args.n,
                c_values=args.c,
                trials=args.trials,
                workers=args.workers,
                master_seed=args.seed,
                mode=args.mode,
                max_rounds=args.max_rounds,
                out_dir=args.out_dir,
            )
            _emit(harness.cmd_scan(cfg))
        elif args.command == "threshold":
            cfg = harness.ScanConfig(
                n_values=args.n,
                trials=args.trials,
                workers=args.workers,
                master_seed=args.seed,
                c_lo=args.c_lo,
                c_hi=args.c_hi,
                tol=args.tol,
                mode=args.mode,
                max_rounds=args.max_rounds,
                out_dir=args.out_dir,
            )
            _emit([e.to_dict() for e in harness.cmd_threshold(cfg)])
        elif args.command == "oracle":
            _emit(harness.cmd_oracle(args.n, _parse_p(args.p)).to_dict())
        elif args.command == "collapse":
            p = _parse_p(args.p)
            rep = harness.cmd_collapse(
                args.n,
                args.seed,
                c=args.c,
                p=None if p is None else float(p),
                mode=args.mode,
                max_rounds=args.max_rounds,
                out_dir=args.out_dir,
            )
            _emit(rep.to_dict())
    except (TriadicError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
