"""``lowsplit`` command line: convergence sweeps, simulations, best-rank curves.

Every flag can also be given in a YAML or JSON file passed with
``--config``; explicit flags win over file values.
"""

from __future__ import annotations

import argparse
import sys
from typing import Dict, List, Optional, Sequence

import yaml

from . import bench
from .lowrank import TruncationRule
from .odesolve import IvpConfig
from .problems import allen_cahn_cubic, flory_huggins, riccati_penzl
from .steppers import KINDS, StepperConfig


def _ints(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _floats(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML/JSON file with default values for any flag")
    p.add_argument("--scheme", choices=("lie", "strang"), default="strang")
    p.add_argument("--oversample", type=int, default=5)
    p.add_argument("--extra-oversample", type=int, default=5)
    p.add_argument("--power-iters", type=int, default=1)
    p.add_argument("--rtol", type=float, default=1e-8, help="truncation rtol (adaptive kinds)")
    p.add_argument("--atol", type=float, default=1e-12, help="truncation atol (adaptive kinds)")
    p.add_argument("--rf-tol", type=float, default=1e-8, help="adaptive rangefinder tolerance")
    p.add_argument("--ivp-rtol", type=float, default=1e-8)
    p.add_argument("--ivp-atol", type=float, default=1e-12)
    p.add_argument("--seed", type=int, default=42)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowsplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convergence", help="temporal convergence table as CSV")
    _common(c)
    c.add_argument("--problem", choices=("ac-cubic", "dre-penzl"), default="ac-cubic")
    c.add_argument("--stepper", choices=KINDS, default="drsvd")
    c.add_argument("--ranks", type=_ints, default=[12, 14, 16, 18])
    c.add_argument("--steps", type=_ints, default=[16, 32, 64, 128, 256])
    c.add_argument("--grid", type=int, default=None,
                   help="points per dimension (ac-cubic: N, dre-penzl: ntilde)")
    c.add_argument("--t-final", type=float, default=None)
    c.add_argument("--paper-scale", action="store_true", help="ac-cubic on the 1024 x 1024 grid")
    c.add_argument("--out", default="report.csv")

    s = sub.add_parser("simulate", help="long run with snapshots and a rank trace")
    _common(s)
    s.add_argument("--problem", choices=("flory-huggins", "ac-cubic"), default="flory-huggins")
    s.add_argument("--ic", choices=("star", "butterfly"), default="star")
    s.add_argument("--stepper", choices=KINDS, default="adrsvd")
    s.add_argument("--rank", type=int, default=16, help="rank for fixed-rank kinds")
    s.add_argument("--grid", type=int, default=128)
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--t-final", type=float, default=100.0)
    s.add_argument("--snapshots", type=_floats, default=[0.0, 10.0, 50.0, 100.0])
    s.add_argument("--out-dir", default="snaps")

    b = sub.add_parser("best-rank", help="method error against best rank-r error over time")
    _common(b)
    b.add_argument("--problem", choices=("ac-cubic", "dre-penzl"), default="dre-penzl")
    b.add_argument("--stepper", choices=("drsvd", "dgn"), default="drsvd")
    b.add_argument("--ranks", type=_ints, default=[8])
    b.add_argument("--steps", type=int, default=512)
    b.add_argument("--grid", type=int, default=None)
    b.add_argument("--t-final", type=float, default=None)
    b.add_argument("--out", default="curve.csv")
    parser.subcommands = {"convergence": c, "simulate": s, "best-rank": b}
    return parser


def load_config(path) -> Dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise SystemExit(f"config file {path} must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    # second pass: file values become defaults, so explicit flags still win
    values = load_config(args.config)
    sub = parser.subcommands[args.command]
    known = {a.dest: a for a in sub._actions}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise SystemExit(f"unknown config keys: {', '.join(unknown)}")
    for key, val in values.items():
        action = known[key]
        if action.type is not None:
            val = action.type(val)
        sub.set_defaults(**{key: val})
    return parser.parse_args(argv)


def stepper_config(args, kind: str, rank: int) -> StepperConfig:
    trunc = TruncationRule.tolerance(args.rtol, args.atol) if kind.startswith("a") else None
    return StepperConfig(kind=kind, rank=rank, oversample=args.oversample,
                         extra_oversample=args.extra_oversample, power_iters=args.power_iters,
                         truncation=trunc, rf_tol=args.rf_tol,
                         ivp=IvpConfig(rtol=args.ivp_rtol, atol=args.ivp_atol), seed=args.seed)


def make_problem(args):
    T = args.t_final
    if args.problem == "ac-cubic":
        N = 1024 if getattr(args, "paper_scale", False) else (args.grid or 256)
        prob = allen_cahn_cubic(N)
    elif args.problem == "dre-penzl":
        prob = riccati_penzl(args.grid or 20)
    else:
        prob = flory_huggins(args.grid, args.ic)
    return prob.with_horizon(T) if T is not None else prob


def cmd_convergence(args) -> int:
    prob = make_problem(args)
    base = stepper_config(args, args.stepper, max(args.ranks))
    reports = bench.temporal_sweep(prob, args.scheme, base, args.ranks, args.steps, seed=args.seed)
    rows = [row for rep in reports for row in rep.csv_rows()]
    bench.write_csv(args.out, bench.CONVERGENCE_HEADER, rows)
    for rep in reports:
        print(f"{rep.method} {rep.scheme} rank={rep.rank}: fitted rate {rep.fitted_rate():.4f}")
    return 0


def cmd_simulate(args) -> int:
    prob = make_problem(args)
    cfg = stepper_config(args, args.stepper, args.rank)
    res = bench.simulate(prob, args.scheme, cfg, args.dt, args.t_final, args.snapshots,
                         args.out_dir)
    ranks = res.trace.ranks
    print(f"{len(res.snapshots)} snapshots in {args.out_dir}; rank range {min(ranks)}-{max(ranks)}")
    return 0


def cmd_best_rank(args) -> int:
    prob = make_problem(args)
    rows = []
    for r in args.ranks:
        cfg = stepper_config(args, args.stepper, r)
        rows += bench.best_rank_curve(prob, args.scheme, cfg, args.steps)
    bench.write_csv(args.out, bench.BEST_RANK_HEADER,
                    [(f"{t:.10g}", f"{e:.10e}", f"{b:.10e}") for t, e, b in rows])
    return 0


COMMANDS = {"convergence": cmd_convergence, "simulate": cmd_simulate, "best-rank": cmd_best_rank}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
