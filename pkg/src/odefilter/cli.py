"""Command-line harness around the solver library and benchmark runners.

Subcommands: solve (one trajectory stream), bench-step (single-step cost
table), work-precision (endpoint error versus run time), stiffness (Van
der Pol step counts). Heavy numeric imports happen inside main so the
thread-cap environment variable takes effect first.
"""

from __future__ import annotations

import argparse
import os
import sys

THREAD_ENV = "ODEFILTER_NUM_THREADS"
_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "NUMBA_NUM_THREADS",
)


def _cap_threads() -> None:
    cap = os.environ.get(THREAD_ENV)
    if cap:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, cap)


def _parse_params(pairs) -> dict:
    params = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--param expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        params[key] = float(value)
    return params


def _floats(text: str):
    return [float(v) for v in text.split(",") if v]


def _ints(text: str):
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odefilter", description="Probabilistic ODE solver benchmark harness."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    solver_tokens = ["ek0-dense", "ek1-dense", "ek0-blockdiag", "ek1-diag", "ek0-kronecker"]
    diffusion_tokens = ["tv-scalar", "tv-vector", "tc-scalar", "tc-vector"]

    ps = sub.add_parser("solve", help="run one solve and write the trajectory stream")
    ps.add_argument("--problem", required=True)
    ps.add_argument("--param", action="append", metavar="KEY=VALUE")
    ps.add_argument("--solver", choices=solver_tokens, default="ek1-diag")
    ps.add_argument("--order", type=int, default=3)
    ps.add_argument("--diffusion", choices=diffusion_tokens, default="tv-scalar")
    ps.add_argument("--rtol", type=float, default=1e-6)
    ps.add_argument("--atol", type=float, default=1e-6)
    ps.add_argument("--fixed-steps", type=int, default=None,
                    help="solve on a uniform grid with this many steps instead of adaptively")
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--max-steps", type=int, default=1_000_000)
    ps.add_argument("--output", required=True)

    pb = sub.add_parser("bench-step", help="time single filter steps across dimensions")
    pb.add_argument("--dims", type=_ints, default="64,128,256,512,1024,2048,4096,8192")
    pb.add_argument("--order", type=_ints, default="2,4,6", dest="orders",
                    help="comma-separated list of prior orders")
    pb.add_argument("--solver", action="append", choices=solver_tokens, default=None)
    pb.add_argument("--repeats", type=int, default=5)
    pb.add_argument("--dense-cutoff", type=int, default=4096)
    pb.add_argument("--output", required=True)

    pw = sub.add_parser("work-precision", help="endpoint RMSE versus run time across tolerances")
    pw.add_argument("--problem", default="pleiades")
    pw.add_argument("--param", action="append", metavar="KEY=VALUE")
    pw.add_argument("--tols", type=_floats, default="1e-3,1e-4,1e-5,1e-6,1e-7,1e-8,1e-9")
    pw.add_argument("--solver", action="append", choices=solver_tokens, default=None)
    pw.add_argument("--order", type=int, default=4)
    pw.add_argument("--reference-steps", type=int, default=200_000)
    pw.add_argument("--parallel", action="store_true")
    pw.add_argument("--output", required=True)

    pf = sub.add_parser("stiffness", help="Van der Pol step counts per stiffness constant")
    pf.add_argument("--mus", type=_floats, default="1000")
    pf.add_argument("--solver", action="append", choices=solver_tokens, default=None)
    pf.add_argument("--order", type=int, default=4)
    pf.add_argument("--diffusion", choices=diffusion_tokens, default="tv-scalar")
    pf.add_argument("--rtol", type=float, default=1e-6)
    pf.add_argument("--atol", type=float, default=1e-6)
    pf.add_argument("--max-steps", type=int, default=1_000_000)
    pf.add_argument("--parallel", action="store_true")
    pf.add_argument("--output", required=True)
    return parser


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)
    from odefilter import bench

    try:
        if args.command == "solve":
            return bench.run_solve(
                args.problem,
                _parse_params(args.param),
                args.solver,
                args.order,
                args.output,
                diffusion=args.diffusion,
                rtol=args.rtol,
                atol=args.atol,
                fixed_steps=args.fixed_steps,
                seed=args.seed,
                max_steps=args.max_steps,
            )
        if args.command == "bench-step":
            return bench.run_bench_step(
                args.dims if isinstance(args.dims, list) else _ints(args.dims),
                args.orders if isinstance(args.orders, list) else _ints(args.orders),
                args.solver or ["ek0-kronecker", "ek0-blockdiag", "ek1-diag", "ek1-dense"],
                args.output,
                repeats=args.repeats,
                dense_cutoff=args.dense_cutoff,
            )
        if args.command == "work-precision":
            return bench.run_work_precision(
                args.problem,
                args.tols if isinstance(args.tols, list) else _floats(args.tols),
                args.solver or ["ek1-diag", "ek0-blockdiag"],
                args.output,
                order=args.order,
                params=_parse_params(args.param),
                reference_steps=args.reference_steps,
                parallel=args.parallel,
            )
        return bench.run_stiffness(
            args.mus if isinstance(args.mus, list) else _floats(args.mus),
            args.solver or ["ek1-dense", "ek1-diag", "ek0-kronecker"],
            args.output,
            order=args.order,
            diffusion=args.diffusion,
            rtol=args.rtol,
            atol=args.atol,
            max_steps=args.max_steps,
            parallel=args.parallel,
        )
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
