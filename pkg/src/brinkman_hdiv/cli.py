"""Command-line entry point.

Subcommands ``converge``, ``channel``, ``spe10``, ``cond-study`` and
``check``.  Exit codes: 0 success, 1 usage error, 2 numerical failure or a
failed invariant.  The last output line is always a ``key=value`` summary
starting with ``RESULT``.
"""
import argparse
import logging
import os
import sys

import numpy as np

from .adapt import MarkingStrategy
from .spaces import OrderNotImplemented

OUTDIR_ENV = "BRINKMAN_HDIV_OUTDIR"
DEFAULT_OUTDIR = "brinkman_out"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _common(p):
    p.add_argument("--family", choices=("bdm", "rt"), default="bdm")
    p.add_argument("--order", type=int, default=1, help="polynomial order k (only k = 1 is implemented)")
    p.add_argument("--alpha", type=float, default=4.0, help="Nitsche penalty")
    p.add_argument("--outdir", default=None,
                   help=f"output directory (default ${OUTDIR_ENV} or ./{DEFAULT_OUTDIR})")
    p.add_argument("--tol", type=float, default=1e-10, help="scaled residual tolerance of the solves")
    p.add_argument("-v", "--verbose", action="store_true")


def _strategy_args(p, default="threshold", fraction=1.0):
    p.add_argument("--strategy", choices=("threshold", "top", "staged"), default=default)
    p.add_argument("--fraction", type=float, default=fraction, help="percent marked by the top strategy")
    p.add_argument("--theta", type=float, default=0.5, help="initial threshold factor")
    p.add_argument("--floor", type=float, default=5.0, help="minimum percent marked by the threshold strategy")


def build_parser():
    parser = _Parser(prog="brinkman-hdiv", description="H(div) mixed finite elements for Brinkman flow")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("converge", help="convergence study on the harmonic-pressure benchmark")
    _common(p)
    p.add_argument("--beta", type=float, default=3.1)
    p.add_argument("--t", type=float, nargs="+", default=[1e-6])
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--levels", type=_positive_int, default=5)
    p.add_argument("--dof-budget", type=_positive_int, default=None)
    p.add_argument("--mode", choices=("uniform", "adaptive"), default="uniform")
    p.add_argument("--start", type=_positive_int, default=4, help="cells per side of the first grid")
    p.add_argument("--no-postprocess", action="store_true")
    p.add_argument("--hybrid", action="store_true", help="hybridise every interior edge")
    p.add_argument("--dd", type=_positive_int, default=None, help="domain decomposition into N subdomains")
    _strategy_args(p)

    p = sub.add_parser("channel", help="adaptive pressure-driven channel flow")
    _common(p)
    p.add_argument("--t", type=float, nargs="+", default=[0.5, 0.05, 0.005])
    p.add_argument("--levels", type=_positive_int, default=10)
    p.add_argument("--dof-budget", type=_positive_int, default=None)
    p.add_argument("--start", type=_positive_int, default=4)
    _strategy_args(p)

    p = sub.add_parser("spe10", help="SPE10 layer with optional streak or crack")
    _common(p)
    p.add_argument("--perm-file", required=True)
    p.add_argument("--layer", type=int, required=True, help="0-based layer index")
    p.add_argument("--scenario", choices=("none", "streak", "tilted", "piercing"), default="none")
    p.add_argument("--model", choices=("brinkman", "darcy"), default="brinkman")
    p.add_argument("--dof-budget", type=_positive_int, default=100_000)
    p.add_argument("--max-levels", type=int, default=None)
    p.add_argument("--pressure", type=float, default=1.0, help="inlet pressure in Pa")
    _strategy_args(p, default="top")

    p = sub.add_parser("cond-study", help="skeleton condition numbers")
    _common(p)
    p.add_argument("--nsub", type=int, nargs="+", default=[4, 16, 64], help="0 hybridises every edge")
    p.add_argument("--t", type=float, nargs="+", default=[0.0, 10.0, 100.0, 1000.0])
    p.add_argument("--n", type=_positive_int, default=16, help="cells per side of the fixed grid")

    p = sub.add_parser("check", help="algebraic invariant suite")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _validate(args):
    if getattr(args, "order", 1) != 1:
        raise OrderNotImplemented(f"order not implemented: k={args.order}")
    if args.command == "converge":
        if args.hybrid and args.dd:
            raise UsageError("--hybrid and --dd are mutually exclusive")
        if args.dof_budget and args.mode == "uniform":
            raise UsageError("--dof-budget needs --mode adaptive")
        if args.beta <= 1:
            raise UsageError("--beta must exceed 1")
    if hasattr(args, "t") and any(t < 0 for t in args.t):
        raise UsageError("--t values must be non-negative")
    if hasattr(args, "alpha") and args.alpha <= 0:
        raise UsageError("--alpha must be positive")
    if args.command == "spe10" and not os.path.isfile(args.perm_file):
        raise UsageError(f"permeability file not found: {args.perm_file}")


def _strategy(args):
    try:
        return MarkingStrategy(args.strategy, fraction=args.fraction, theta=args.theta, floor=args.floor)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _outdir(args):
    return args.outdir or os.environ.get(OUTDIR_ENV) or DEFAULT_OUTDIR


def _summary(status, **kw):
    parts = [f"RESULT status={status}"] + [f"{k}={v}" for k, v in kw.items()]
    return " ".join(parts)


def _fmt(v):
    return "nan" if v is None or not np.isfinite(v) else f"{v:.4g}"


def _cmd_converge(args, out):
    from .bench import run_convergence

    abl = {"no_postprocess": args.no_postprocess, "hybrid": args.hybrid, "dd": args.dd}
    tables = run_convergence(args.family, args.beta, args.t, args.sigma, args.levels, args.mode, abl,
                             _strategy(args), args.dof_budget, args.alpha, args.start, outdir=out)
    rates = []
    for label, tb in tables.items():
        r = tb.rate() if len(tb.rows) > 1 else float("nan")
        rates.append(r)
        print(f"{label}: levels={len(tb.rows)} final_dofs={tb.rows[-1]['N_dofs']} rate={_fmt(r)}")
    return 0, _summary("ok", command="converge", tables=len(tables),
                       rates=",".join(_fmt(r) for r in rates), outdir=out)


def _cmd_channel(args, out):
    from .bench import run_channel

    runs = run_channel(args.t, _strategy(args), args.levels, args.dof_budget, args.family, args.start,
                       args.alpha, outdir=out)
    for t, run in runs.items():
        tb = run.table
        r = tb.rate() if len(tb.rows) > 1 else float("nan")
        print(f"t={t:g}: levels={len(tb.rows)} err={tb.rows[-1]['err_total_rel']:.3e} rate={_fmt(r)} "
              f"near_wall={_fmt(run.wall_fraction)}")
    return 0, _summary("ok", command="channel", runs=len(runs), outdir=out)


def _cmd_spe10(args, out):
    from .bench import run_spe10

    run = run_spe10(args.perm_file, args.layer, args.scenario, args.model, _strategy(args), args.dof_budget,
                    args.max_levels, args.pressure, args.family, args.alpha, outdir=out)
    s = run.series
    for i, (n, q) in enumerate(zip(s.n_dofs, s.flow_ft3day)):
        print(f"level {i}: dofs={n} flow={q:.6e} ft3/day")
    return 0, _summary("ok", command="spe10", levels=len(s.n_dofs), dofs=s.n_dofs[-1],
                       flow_m3s=f"{s.flow_m3s[-1]:.6e}", flow_ft3day=f"{s.flow_ft3day[-1]:.6e}",
                       max_regime_ratio=_fmt(s.meta["max_regime_ratio"]), outdir=out)


def _cmd_cond(args, out):
    from .bench import run_cond_study

    if any(n < 0 for n in args.nsub):
        raise UsageError("--nsub values must be non-negative")
    rows = run_cond_study(args.nsub, args.t, args.n, args.family, alpha=args.alpha, outdir=out)
    for r in rows:
        print(f"nsub={r['nsub']} t={r['t']:g} n={r['n_skeleton']} kappa={r['kappa']:.4e}")
    return 0, _summary("ok", command="cond-study", rows=len(rows), outdir=out)


def _cmd_check(args, out):
    from .invariants import run_checks

    results, wall = run_checks(print)
    failed = [r.name for r in results if not r.passed]
    status = "ok" if not failed else "failed"
    return (0 if not failed else 2), _summary(status, command="check", passed=len(results) - len(failed),
                                              failed=",".join(failed) or "none", seconds=f"{wall:.1f}")


COMMANDS = {"converge": _cmd_converge, "channel": _cmd_channel, "spe10": _cmd_spe10,
            "cond-study": _cmd_cond, "check": _cmd_check}


def main(argv=None):
    from .hybrid import HybridError
    from .mesh import MeshError
    from .postprocess import PostprocessingError
    from .problem import IngestionError
    from .solve import SolverError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        _validate(args)
    except (UsageError, OrderNotImplemented) as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        print(_summary("usage-error", message=str(exc).replace(" ", "_")))
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None if args.command == "check" else _outdir(args)
    try:
        code, summary = COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(_summary("usage-error", message=str(exc).replace(" ", "_")))
        return 1
    except (SolverError, HybridError, PostprocessingError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        print(_summary("numerical-failure", command=args.command, error=type(exc).__name__))
        return 2
    except (IngestionError, MeshError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        print(_summary("input-error", command=args.command, error=type(exc).__name__))
        return 1
    print(summary)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
