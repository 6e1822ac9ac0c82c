"""Command-line front end.

Exit codes: 0 converged and quadrature verified, 2 quadrature unverified,
3 NLP did not converge, 64 usage or configuration error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import benchmarks
from .convergence import SCHEMES, run_convergence
from .pipeline import CONVERGED, QUAD_UNVERIFIED, InvalidProblemError, solve_case
from .transcription import (quad_tolerance, quadrature_error, write_mesh,
                            write_trajectory_csv)

EXIT_OK = 0
EXIT_QUAD = 2
EXIT_NLP = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty N list")
    return out


def _add_mesh_args(p):
    p.add_argument("problem", help="benchmark name: " + ", ".join(benchmarks.BENCHMARKS))
    p.add_argument("-N", "--intervals", type=int, help="number of mesh intervals")
    p.add_argument("--phi", type=float, help="mesh flexibility in [0, 1)")
    p.add_argument("-a", "--deg-state", type=int, help="state polynomial degree")
    p.add_argument("-b", "--deg-control", type=int, help="control polynomial degree")
    p.add_argument("-Q", "--quad-order", type=int, help="Gauss-Legendre points per interval")


def build_parser():
    parser = _Parser(prog="flexirm", description="Integrated residual solver with flexible meshes.")
    parser.add_argument("--config", help=f"INI file (default ${benchmarks.CONFIG_ENV} or bundled)")
    parser.add_argument("--seed", type=int, default=0, help="seed recorded for reproducibility")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one problem from a cold start")
    _add_mesh_args(p)
    p.add_argument("--flexible", action="store_true", help="mesh nodes are decision variables")
    p.add_argument("-o", "--out", default=".", help="output directory")

    p = sub.add_parser("converge", help="sweep N for fixed and flexible meshes")
    _add_mesh_args(p)
    p.add_argument("--n-list", type=_int_list, required=True, help="e.g. 5..15 or 3,10,30")
    p.add_argument("--schemes", default=",".join(SCHEMES))
    p.add_argument("--fit-floor", type=int, default=5)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("-o", "--out", default=".", help="output directory")

    p = sub.add_parser("check-quad", help="solve, then compare the objective at Q and m*Q")
    _add_mesh_args(p)
    p.add_argument("--flexible", action="store_true")
    p.add_argument("--multiplier", type=int, default=2)
    return parser


def _case_and_mesh(args):
    case = benchmarks.get(args.problem, config=args.config)
    over = dict(n_intervals=args.intervals, phi=args.phi, deg_state=args.deg_state,
                deg_control=args.deg_control, quad_order=args.quad_order)
    over = {k: v for k, v in over.items() if v is not None}
    if args.deg_state is not None and args.quad_order is None:
        over["quad_order"] = args.deg_state + 3
    return case, replace(case.mesh, **over)


def _exit_for(status):
    if status == CONVERGED:
        return EXIT_OK
    if status == QUAD_UNVERIFIED:
        return EXIT_QUAD
    return EXIT_NLP


def cmd_solve(args):
    case, mesh = _case_and_mesh(args)
    mesh = replace(mesh, flexible=args.flexible)
    res = solve_case(case, mesh)
    os.makedirs(args.out, exist_ok=True)
    write_trajectory_csv(os.path.join(args.out, "trajectory.csv"), res.trajectory)
    write_mesh(os.path.join(args.out, "mesh.txt"), res.report.mesh)
    doc = res.report.to_json_dict()
    doc["seed"] = args.seed
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    print(f"{args.problem}: status={res.report.status} eps_r={res.report.eps_r:.6e} "
          f"eps_q={res.report.eps_q:.3e} iterations={res.report.nlp_iterations}")
    return _exit_for(res.report.status)


def cmd_converge(args):
    case, mesh = _case_and_mesh(args)
    case = replace(case, mesh=mesh)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]

    def progress(row):
        print(f"{row.scheme:8s} N={row.N:3d} eps_r={row.eps_r:.6e} status={row.status}",
              flush=True)

    report = run_convergence(case, args.n_list, schemes=schemes, repeats=args.repeats,
                             fit_floor=args.fit_floor, progress=progress)
    os.makedirs(args.out, exist_ok=True)
    report.write_csv(os.path.join(args.out, "convergence.csv"))
    report.write_fits(os.path.join(args.out, "fits.json"))
    for name, fit in report.fits.items():
        print(f"{name}: order={fit.order:.4f} log_k={fit.log_k:.4f} r2={fit.r2:.4f} "
              f"points={fit.n_points}")
    bad = [r.status for r in report.rows if r.status != CONVERGED]
    if not bad:
        return EXIT_OK
    return EXIT_NLP if any(s != QUAD_UNVERIFIED for s in bad) else EXIT_QUAD


def cmd_check_quad(args):
    case, mesh = _case_and_mesh(args)
    mesh = replace(mesh, flexible=args.flexible)
    res = solve_case(case, mesh)
    eps_q = quadrature_error(res.z, res.nlp, args.multiplier)
    tol = quad_tolerance(res.report.eps_r)
    ok = eps_q <= tol
    print(f"eps_q={eps_q:.6e} tol={tol:.3e} Q={mesh.quad_order} "
          f"multiplier={args.multiplier} {'verified' if ok else 'unverified'}")
    return EXIT_OK if ok else EXIT_QUAD


COMMANDS = {"solve": cmd_solve, "converge": cmd_converge, "check-quad": cmd_check_quad}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.problem not in benchmarks.BENCHMARKS:
        parser.print_usage(sys.stderr)
        print(f"flexirm: error: unknown problem {args.problem!r}; known: "
              f"{', '.join(benchmarks.BENCHMARKS)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (benchmarks.ConfigurationError, benchmarks.ParameterError,
            InvalidProblemError, ValueError) as exc:
        print(f"flexirm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
