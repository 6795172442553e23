"""Command-line driver.

Examples
--------
  gconda gen --n 128 --d 128 --degree 10 --ratio 5 --seed 7 --out g.txt
  gconda theory --out runs/theory
  gconda sweep-pq --trials 30 --points 1,5,10 --out runs/pq
  gconda sweep-delta --config my.cfg --methods ERM,GCONDA --out runs/delta
  gconda correlate --pairs 40 --out runs/corr
  gconda fig1 --trials 20 --out runs/fig1
  gconda selftest

Settings come from the shipped config for each suite, then ``--config FILE``
(key=value lines), then individual flags.  ``GCONDA_WORKERS`` sets the
default number of worker processes.

Exit status: 0 on success, 1 if any trial or check failed, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex
from .csbm import CsbmParams, ShiftSpec, generate_csbm, generate_target, write_graph
from .numerics import make_rng

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

_COMMANDS = {
    "theory": "theory",
    "sweep-pq": "sweep_pq",
    "sweep-delta": "sweep_delta",
    "correlate": "correlate",
    "fig1": "fig1",
}


def _add_suite_flags(p: argparse.ArgumentParser, suite: str) -> None:
    p.add_argument("--config", type=Path, help="key=value file overriding the shipped defaults")
    p.add_argument("--out", type=Path, default=Path("gconda_out") / suite, help="output directory")
    p.add_argument("--workers", type=int, help=f"worker processes (default: ${ex.WORKERS_ENV} or 1)")
    for key in ex.suite_keys(suite):
        p.add_argument("--" + key.replace("_", "-"), dest=key, metavar=key.upper(), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gconda", description=__doc__.split("\n\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a CSBM graph (and optionally a shifted target) to text files")
    g.add_argument("--n", type=int, default=128)
    g.add_argument("--d", type=int, default=128)
    g.add_argument("--degree", type=float, default=10.0)
    g.add_argument("--ratio", type=float, default=5.0)
    g.add_argument("--signal", type=float, default=0.6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--target-out", type=Path)
    g.add_argument("--delta", type=float, default=0.0)
    g.add_argument("--theta", type=float, default=0.0)
    g.add_argument("--r-target", type=float)
    g.add_argument("--degree-target", type=float)

    for cmd, suite in _COMMANDS.items():
        p = sub.add_parser(cmd, help=f"run the {suite} suite")
        _add_suite_flags(p, suite)
        if cmd == "theory":
            p.add_argument("--skip-fig1", action="store_true", help="only write theory.csv")

    s = sub.add_parser("selftest", help="transport-oracle and gradient-check suites")
    s.add_argument("--quick", action="store_true", help="fewer instances")
    return parser


def _cmd_gen(args) -> int:
    params = CsbmParams(n=args.n, d=args.d, degree=args.degree, ratio=args.ratio, signal=args.signal)
    rng_src, rng_tgt = make_rng(args.seed).spawn(2)
    g = generate_csbm(params, rng_src)
    write_graph(g, args.out)
    print(f"wrote {args.out} ({g.n} nodes, {g.num_edges} edges)")
    if args.target_out is not None:
        spec = ShiftSpec(delta=args.delta, theta=args.theta, ratio=args.r_target, degree=args.degree_target)
        t = generate_target(params, spec, g.mu, rng_tgt)
        write_graph(t, args.target_out)
        print(f"wrote {args.target_out} ({t.n} nodes, {t.num_edges} edges)")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .checks import run_all

    results = run_all(quick=args.quick)
    for r in results:
        print(r.line())
    n_pass = sum(r.ok for r in results)
    print(f"{n_pass}/{len(results)} suites passed")
    return EXIT_OK if n_pass == len(results) else EXIT_FAILED


def _run_suite(cmd: str, args, parser) -> int:
    suite = _COMMANDS[cmd]
    overrides = {k: getattr(args, k) for k in ex.suite_keys(suite)}
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else None
        st = ex.resolve_settings(suite, text, overrides)
        workers = ex.worker_count(args.workers)
    except (OSError, ex.SettingsError) as exc:
        parser.error(str(exc))
    if suite in ("sweep_pq", "sweep_delta"):
        res = ex.run_sweep(suite, st, args.out, workers)
    elif suite == "theory":
        res = ex.run_theory(st, args.out, workers)
        if not args.skip_fig1:
            f1 = ex.run_fig1(ex.resolve_settings("fig1"), args.out, workers)
            res = ex.SuiteOutput(res.files + f1.files, res.n_failed + f1.n_failed, res.lines + f1.lines)
    elif suite == "fig1":
        res = ex.run_fig1(st, args.out, workers)
    else:
        res = ex.run_correlate(st, args.out, workers)
    for line in res.lines:
        print(line)
    for f in res.files:
        print(f"wrote {f}")
    if res.n_failed:
        print(f"{res.n_failed} failed trial(s)", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "selftest":
            return _cmd_selftest(args)
        return _run_suite(args.command, args, parser)
    except SystemExit as exc:  # argparse usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
