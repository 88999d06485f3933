"""Batch command-line front-end.

Subcommands: ``fit`` runs one factorization and writes the factors, the
convergence log, and a run manifest; ``bench`` runs several solvers from
identical initial factors and writes per-solver logs plus a summary table;
``nqp-demo`` prints the plain-versus-combined iteration contrast on the
built-in 2x2 ill-scaled problem; ``convert`` translates between the
supported matrix file formats.

Exit codes: 0 success, 2 bad flags, 3 data errors, 4 numerical failure.
All outputs stay inside the directory given by --out.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .baselines import mur_fit, plain_els_solve
from .exceptions import DataDomainError, NumericalFailureError, ParseError
from .matrix import DenseMatrix, SparseMatrix
from .nmf import NmfConfig, fit
from .nqp import NqpProblem, StopState, solve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEMO_H = np.array([[1.0, 0.1], [0.1, 10.0]])
DEMO_H_VEC = np.array([-80.0, -100.0])

SOLVERS = ("alo", "mur")


def _add_dataset_flags(p):
    p.add_argument("data", help="path to the dataset file")
    p.add_argument("--format", required=True, choices=io.FORMATS, dest="format_")
    p.add_argument("--tfidf", action="store_true",
                   help="apply tf * ln(D/df) weighting (uci-bow only)")


def _add_fit_flags(p):
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--mu1", type=float, default=0.0)
    p.add_argument("--mu2", type=float, default=0.0)
    p.add_argument("--beta1", type=float, default=0.0)
    p.add_argument("--beta2", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="nmfkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"nmfkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="factorize a dataset")
    _add_dataset_flags(p_fit)
    _add_fit_flags(p_fit)
    p_fit.add_argument("--solver", choices=SOLVERS, default="alo")

    p_bench = sub.add_parser("bench", help="compare solvers under shared initialization")
    _add_dataset_flags(p_bench)
    _add_fit_flags(p_bench)
    p_bench.add_argument("--solvers", default="alo,mur",
                         help="comma-separated subset of: " + ",".join(SOLVERS))

    p_demo = sub.add_parser("nqp-demo", help="iteration contrast on the 2x2 toy problem")
    p_demo.add_argument("--tol", type=float, default=1e-10)
    p_demo.add_argument("--x0", default="200,20",
                        help="comma-separated nonnegative start point")

    p_conv = sub.add_parser("convert", help="convert between matrix file formats")
    _add_dataset_flags(p_conv)
    p_conv.add_argument("--to", required=True, choices=("csv-dense", "matrix-market"))
    p_conv.add_argument("--out", required=True, help="output directory")
    p_conv.add_argument("--name", default=None, help="output file name")
    return parser


def _make_config(args):
    try:
        return NmfConfig(
            rank=args.rank, max_outer=args.max_iter, epsilon=args.epsilon,
            mu1=args.mu1, mu2=args.mu2, beta1=args.beta1, beta2=args.beta2,
            workers=args.workers, seed=args.seed,
        )
    except ValueError as err:
        raise UsageError(str(err)) from None


class UsageError(Exception):
    pass


def _write_manifest(out_dir, args, extra=None):
    """Every flag that shaped the run, flat key=value text; enough to replay
    the command and reproduce its outputs bit-exactly at workers=1."""
    lines = [f"version=nmfkit-{__version__}", f"subcommand={args.command}"]
    for key, value in sorted(vars(args).items()):
        if key == "command":
            continue
        lines.append(f"{key.rstrip('_')}={value}")
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    (Path(out_dir) / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_dataset(args):
    return io.load(io.DatasetSpec(args.data, args.format_, tfidf=args.tfidf))


def _run_solver(name, data, cfg):
    if name == "alo":
        return fit(data, cfg)
    return mur_fit(data, cfg)


def cmd_fit(args):
    cfg = _make_config(args)
    data = _load_dataset(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model, log = _run_solver(args.solver, data, cfg)
    except NumericalFailureError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        if err.log is not None and len(err.log):
            io.write_log(err.log, out / "log.csv")
        return EXIT_NUMERIC
    io.write_dense_csv(model.G, out / "G.csv")
    io.write_dense_csv(model.F, out / "F.csv")
    io.write_log(log, out / "log.csv")
    _write_manifest(out, args)
    print(f"fit: {len(log)} iterations, final objective {log.final_objective:.6g}")
    return EXIT_OK


def cmd_bench(args):
    cfg = _make_config(args)
    names = [s.strip() for s in args.solvers.split(",") if s.strip()]
    for name in names:
        if name not in SOLVERS:
            raise UsageError(f"unknown solver {name!r}; choose from {SOLVERS}")
    if not names:
        raise UsageError("no solvers requested")
    data = _load_dataset(args)
    n, m = data.rows, data.cols
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in names:
        try:
            _, log = _run_solver(name, data, cfg)
        except NumericalFailureError as err:
            print(f"numerical failure in {name}: {err}", file=sys.stderr)
            return EXIT_NUMERIC
        solver_dir = out / name
        solver_dir.mkdir(exist_ok=True)
        io.write_log(log, solver_dir / "log.csv")
        k_bar = sum(log.inner_iterations) / (len(log) * (m + n))
        rows.append((name, log.final_objective, k_bar, log.seconds[-1]))
    with open(out / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write("solver,final_objective,k_bar,seconds\n")
        for name, objective, k_bar, seconds in rows:
            fh.write(f"{name},{objective:.17g},{k_bar:.17g},{seconds:.17g}\n")
    _write_manifest(out, args)
    for name, objective, k_bar, seconds in rows:
        print(f"{name}: final objective {objective:.6g}, k_bar {k_bar:.3g}, {seconds:.3g}s")
    return EXIT_OK


def cmd_nqp_demo(args):
    try:
        x0 = np.array([float(v) for v in args.x0.split(",")])
    except ValueError:
        raise UsageError(f"--x0 must be comma-separated numbers, got {args.x0!r}") from None
    if x0.shape != (2,) or np.any(x0 < 0):
        raise UsageError("--x0 must be two nonnegative numbers")
    if not 0 < args.tol <= 1:
        raise UsageError("--tol must lie in (0, 1]")
    problem = NqpProblem(DEMO_H, DEMO_H_VEC, x0)
    plain = plain_els_solve(problem, tol=args.tol)
    combined = solve(problem, StopState(epsilon=args.tol), max_inner=10000)
    print(f"{'solver':<24}{'iterations':>12}  solution")
    for name, sol in (("plain-exact-line-search", plain), ("combined", combined)):
        xs = ", ".join(f"{v:.6f}" for v in sol.x)
        print(f"{name:<24}{sol.inner_iterations:>12}  [{xs}]")
    return EXIT_OK


def cmd_convert(args):
    data = _load_dataset(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "csv" if args.to == "csv-dense" else "mtx"
    name = args.name or f"converted.{suffix}"
    target = out / name
    if args.to == "csv-dense":
        dense = data.to_dense() if isinstance(data, SparseMatrix) else data
        io.write_dense_csv(dense, target)
    else:
        sparse = data if isinstance(data, SparseMatrix) else SparseMatrix.from_dense(data)
        io.write_matrix_market(sparse, target)
    _write_manifest(out, args, extra={"output": name})
    print(f"wrote {target}")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "bench": cmd_bench,
    "nqp-demo": cmd_nqp_demo,
    "convert": cmd_convert,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse already printed its message; --version exits 0, errors 2
        return err.code if isinstance(err.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"{parser.prog}: error: {err}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    except (ParseError, DataDomainError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
