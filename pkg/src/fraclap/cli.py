"""Command-line front-end: core construction, solves, and benchmark sweeps.

Subcommands:

    build-core     build one operator core and dump it
    solve          run the control/state pipeline for one configuration
    bench-precond  iteration-count matrix over grids x preconditioner ranks
    rank-decay     singular-value tails (2D) or Tucker errors (3D) vs rank
    timing         median seconds per PCG iteration vs grid size

Exit codes: 0 success, 1 usage error, 2 non-convergence, 3 I/O failure.
A flat key=value config file can preload any flag (--config FILE); flags
given on the command line override the file.  FRACLAP_THREADS caps the
worker threads used by bench sweeps.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .decomp import TruncationSpec
from .fracop import (
    CoreFunctionKind,
    DiagOpFunction,
    LowRankOperator,
    _coarsen_sizes,
    _dense_core,
    _mg_tucker,
    build_core,
    reciprocal_core,
    save_operator,
)
from .rhs import DESIGN_TAGS, DesignFunction, random_smooth
from .solver import (
    REPORT_COLUMNS,
    PcgBreakdownError,
    SolverConfig,
    pcg,
    report_row,
    solve_control,
    solve_state,
)
from .spectral import EigenSpectrum, Mode1D, laplacian_spectrum
from .tensor import CpTensor, ResourceLimitError, cp_to_dense, save_tensor, tucker_to_dense

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_CONVERGENCE = 2
EXIT_IO = 3

_KINDS = ("g1", "g2", "g3", "g4")


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _int_list(text):
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _float_list(text):
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _rank_list(text):
    """Either comma-separated ranks or an inclusive span like 5..10."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError("empty rank span %r" % (text,))
        return list(range(lo, hi + 1))
    return _int_list(text)


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="seed for random right-hand sides and error probes")
    common.add_argument("--config", default=None,
                        help="flat key=value file preloading flags (flags win)")

    p = _Parser(prog="fraclap",
                description="Low-rank solvers for fractional-operator control problems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build-core", parents=[common],
                       help="build one operator core and dump it")
    b.add_argument("--kind", required=True, choices=_KINDS)
    b.add_argument("--d", type=int, required=True, choices=(2, 3))
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--alpha", type=float, required=True)
    b.add_argument("--method", default="auto",
                   choices=("auto", "sinc", "dense-svd", "mg-tucker"))
    b.add_argument("--eps", type=float, default=1e-6)
    b.add_argument("--rank-cap", type=int, default=None)
    b.add_argument("--agg", default="sum-then-power",
                   choices=("sum-then-power", "power-then-sum"))
    b.add_argument("--spectrum", default="laplacian", choices=("laplacian", "constant"))
    b.add_argument("--out", default=None)

    s = sub.add_parser("solve", parents=[common],
                       help="solve for the control or the state")
    s.add_argument("--d", type=int, required=True, choices=(2, 3))
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--rhs", default="gaussian-bump",
                   choices=tuple(t for t in DESIGN_TAGS if t != "custom-separable"))
    s.add_argument("--precond-rank", type=int, default=6)
    s.add_argument("--eps", type=float, default=1e-8)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--k-max", type=int, default=100)
    s.add_argument("--target", default="control", choices=("control", "state"))
    s.add_argument("--solve-method", default="pcg", choices=("pcg", "direct"))
    s.add_argument("--out", default=None, help="solution tensor dump path")
    s.add_argument("--report", default=None, help="CSV report row path")

    bp = sub.add_parser("bench-precond", parents=[common],
                        help="iteration counts over grids and preconditioner ranks")
    bp.add_argument("--d", type=int, required=True, choices=(2, 3))
    bp.add_argument("--alpha", type=float, required=True)
    bp.add_argument("--kinds", default="g1,g4,g3")
    bp.add_argument("--grid-list", required=True)
    bp.add_argument("--rank-list", required=True)
    bp.add_argument("--eps", type=float, default=1e-8)
    bp.add_argument("--tol", type=float, default=1e-6)
    bp.add_argument("--k-max", type=int, default=40)
    bp.add_argument("--out", default=None)

    rd = sub.add_parser("rank-decay", parents=[common],
                        help="approximation error of one core vs rank")
    rd.add_argument("--kind", required=True, choices=_KINDS)
    rd.add_argument("--d", type=int, required=True, choices=(2, 3))
    rd.add_argument("--n", type=int, required=True)
    rd.add_argument("--alpha-list", required=True)
    rd.add_argument("--max-rank", type=int, default=20)
    rd.add_argument("--out", default=None)

    t = sub.add_parser("timing", parents=[common],
                       help="median seconds per PCG iteration vs grid size")
    t.add_argument("--d", type=int, required=True, choices=(2, 3))
    t.add_argument("--alpha", type=float, default=0.5)
    t.add_argument("--rank", type=int, default=6)
    t.add_argument("--kind", default="g1", choices=_KINDS)
    t.add_argument("--grid-list", required=True)
    t.add_argument("--repeats", type=int, default=3)
    t.add_argument("--eps", type=float, default=1e-8)
    t.add_argument("--out", default=None)

    return p


def _inject_config(argv):
    """Expand --config FILE into key=value tokens placed before user flags."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
            break
        if tok.startswith("--config="):
            path = tok.split("=", 1)[1]
            break
    if path is None or not argv:
        return argv
    tokens = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError("%s:%d: expected key=value, got %r"
                                 % (path, lineno, line))
            tokens += ["--" + key.strip().replace("_", "-"), val.strip()]
    return argv[:1] + tokens + argv[1:]


def _make_spectrum(d, n, which="laplacian"):
    if which == "laplacian":
        return laplacian_spectrum(n, d)
    modes = tuple(Mode1D(n=n, h=1.0 / (n + 1), eigenvalues=np.ones(n))
                  for _ in range(d))
    return EigenSpectrum(modes)


def _write_csv(path, header, rows):
    def emit(handle):
        w = csv.writer(handle)
        w.writerow(header)
        w.writerows(rows)

    if path is None:
        buf = io.StringIO()
        emit(buf)
        sys.stdout.write(buf.getvalue())
    else:
        with open(path, "w", newline="") as f:
            emit(f)


def _worker_count():
    raw = os.environ.get("FRACLAP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _cmd_build_core(args):
    spectrum = _make_spectrum(args.d, args.n, args.spectrum)
    kind = CoreFunctionKind(args.kind, args.alpha, args.agg)
    spec = TruncationSpec(tolerance=args.eps, max_rank=args.rank_cap)
    op = build_core(kind, spectrum, spec, method=args.method, seed=args.seed)
    print("kind=%s d=%d n=%d alpha=%g rank=%d achieved_error=%.3e"
          % (args.kind, args.d, args.n, args.alpha, op.rank, op.achieved_error))
    if args.out is not None:
        save_operator(args.out, op)
    return EXIT_OK


def _cmd_solve(args):
    spectrum = _make_spectrum(args.d, args.n)
    cfg = SolverConfig(alpha=args.alpha, beta=args.beta, gamma=args.gamma,
                       eps=args.eps, precond_rank=args.precond_rank,
                       residual_tol=args.tol, k_max=args.k_max)
    y_design = DesignFunction(args.rhs).evaluate(spectrum.mode_sizes)
    code = EXIT_OK
    if args.target == "control":
        u, report = solve_control(y_design, cfg, spectrum,
                                  method=args.solve_method, seed=args.seed)
        solution = u
        print("control: iterations=%d residual=%.3e rank=%d"
              % (report.iterations, report.residuals[-1], u.rank))
        if not report.converged:
            code = EXIT_NO_CONVERGENCE
    else:
        solution = solve_state(y_design, cfg, spectrum, seed=args.seed)
        report = None
        print("state: rank=%d" % solution.rank)
    if args.out is not None:
        save_tensor(args.out, solution)
    if args.report is not None and report is not None:
        row = report_row(args.target, args.d, args.n, args.alpha,
                         args.precond_rank, args.eps, report)
        _write_csv(args.report, REPORT_COLUMNS, [row])
    return code


def _bench_cell(fun, pre, b, cfg):
    try:
        _, report = pcg(fun, pre, b, None, cfg)
    except PcgBreakdownError:
        return -1
    return report.iterations if report.converged else -1


def _cmd_bench_precond(args):
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for k in kinds:
        if k not in _KINDS:
            raise ValueError("unknown kind %r" % (k,))
    grids = _int_list(args.grid_list)
    ranks = _rank_list(args.rank_list)
    if not grids or not ranks:
        raise ValueError("empty grid or rank list")
    spec = TruncationSpec(tolerance=args.eps)

    jobs = {}
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        for kind_tag in kinds:
            for n in grids:
                # the kind names the approximate inverse; the system solved
                # is its entrywise reciprocal at tight tolerance
                spectrum = _make_spectrum(args.d, n)
                kind = CoreFunctionKind(kind_tag, args.alpha)
                fun = LowRankOperator(reciprocal_core(kind, spectrum, spec,
                                                      seed=args.seed))
                b = random_smooth(spectrum.mode_sizes, rank=2,
                                  seed=args.seed * 1000 + n)
                pres = _preconditioner_family(kind, spectrum, ranks, args.seed)
                for r, pre in zip(ranks, pres):
                    cfg = SolverConfig(alpha=args.alpha, eps=args.eps,
                                       precond_rank=r, residual_tol=args.tol,
                                       k_max=args.k_max)
                    jobs[(kind_tag, n, r)] = pool.submit(_bench_cell, fun, pre, b, cfg)
        results = {key: fut.result() for key, fut in jobs.items()}

    header = ["kind", "r"] + [str(n) for n in grids]
    rows = [[kind_tag, r] + [results[(kind_tag, n, r)] for n in grids]
            for kind_tag in kinds for r in ranks]
    _write_csv(args.out, header, rows)
    return EXIT_OK


def _preconditioner_family(kind, spectrum, ranks, seed):
    """Rank-r cores of the kind itself at several ranks, sharing setup work.

    In 2D the ranks are nested slices of one dense SVD; elsewhere each rank
    is built independently through the multigrid route.
    """
    if spectrum.d == 2:
        G = _dense_core(kind, spectrum)
        U, s, Vt = np.linalg.svd(G, full_matrices=False)
        total = float(np.sqrt(np.sum(s * s)))
        ops = []
        for r in ranks:
            k = min(int(r), int(np.count_nonzero(s > 0.0)))
            tail = float(np.sqrt(np.sum(s[k:] ** 2)))
            core = CpTensor(s[:k], [U[:, :k], Vt[:k].T])
            diag = DiagOpFunction(spectrum, kind, core,
                                  tail / total if total else 0.0)
            ops.append(LowRankOperator(diag))
        return ops
    specs = [TruncationSpec(max_rank=r, mode="fixed-rank") for r in ranks]
    return [LowRankOperator(build_core(kind, spectrum, sp, seed=seed))
            for sp in specs]


def _cmd_rank_decay(args):
    alphas = _float_list(args.alpha_list)
    if not alphas:
        raise ValueError("empty alpha list")
    rows = []
    if args.d == 2:
        spectrum = _make_spectrum(2, args.n)
        for alpha in alphas:
            kind = CoreFunctionKind(args.kind, alpha)
            s = np.linalg.svd(_dense_core(kind, spectrum), compute_uv=False)
            total = float(np.sqrt(np.sum(s * s)))
            for r in range(0, args.max_rank + 1):
                tail = float(np.sqrt(np.sum(s[r:] ** 2)))
                rows.append([args.kind, 2, args.n, alpha, r,
                             "%.6e" % (tail / total if total else 0.0)])
    else:
        spectrum = _make_spectrum(3, args.n)
        rank_cap = _coarsen_sizes(args.n)[0]  # ladder limits the Tucker rank
        for alpha in alphas:
            kind = CoreFunctionKind(args.kind, alpha)
            exact = _dense_core(kind, spectrum)
            norm = float(np.linalg.norm(exact))
            rows.append([args.kind, 3, args.n, alpha, 0, "%.6e" % 1.0])
            for r in range(1, min(args.max_rank, rank_cap) + 1):
                tt = _mg_tucker(kind, spectrum, (r,) * 3)
                err = float(np.linalg.norm(tucker_to_dense(tt) - exact)) / norm
                rows.append([args.kind, 3, args.n, alpha, r, "%.6e" % err])
    header = ["kind", "d", "n", "alpha", "rank", "rel_error"]
    _write_csv(args.out, header, rows)
    return EXIT_OK


def _cmd_timing(args):
    grids = _int_list(args.grid_list)
    if not grids:
        raise ValueError("empty grid list")
    spec = TruncationSpec(tolerance=args.eps)
    rows = []
    medians = {}
    for n in grids:
        spectrum = _make_spectrum(args.d, n)
        kind = CoreFunctionKind(args.kind, args.alpha)
        fun = LowRankOperator(reciprocal_core(kind, spectrum, spec, seed=args.seed))
        pre = LowRankOperator(build_core(
            kind, spectrum, TruncationSpec(max_rank=args.rank, mode="fixed-rank"),
            seed=args.seed))
        b = random_smooth(spectrum.mode_sizes, rank=2, seed=args.seed * 1000 + n)
        # tight residual target so the timed runs never stop early
        cfg = SolverConfig(alpha=args.alpha, eps=args.eps, precond_rank=args.rank,
                           residual_tol=1e-10, k_max=4)
        samples = []
        for rep in range(args.repeats + 1):
            try:
                _, report = pcg(fun, pre, b, None, cfg)
            except PcgBreakdownError:
                break
            if rep > 0:  # first run warms caches and is discarded
                samples += report.iteration_seconds
        med = float(np.median(samples)) if samples else float("nan")
        medians[n] = med
        rows.append([n, "%.6e" % med])
    _write_csv(args.out, ["n", "seconds_per_iteration"], rows)
    for a, b_ in zip(grids, grids[1:]):
        if medians[a] > 0 and np.isfinite(medians[a]) and np.isfinite(medians[b_]):
            print("n=%d -> n=%d: per-iteration time ratio %.2f"
                  % (a, b_, medians[b_] / medians[a]))
    return EXIT_OK


_COMMANDS = {
    "build-core": _cmd_build_core,
    "solve": _cmd_solve,
    "bench-precond": _cmd_bench_precond,
    "rank-decay": _cmd_rank_decay,
    "timing": _cmd_timing,
}


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        argv = _inject_config(argv)
    except OSError as exc:
        print("fraclap: cannot read config: %s" % exc, file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print("fraclap: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, ResourceLimitError) as exc:
        print("fraclap: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except PcgBreakdownError as exc:
        print("fraclap: %s" % exc, file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except OSError as exc:
        print("fraclap: %s" % exc, file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
