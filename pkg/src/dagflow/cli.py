"""Command-line surface.

Subcommands: classify, order, traffic, solve, intensity, ingest.
Exit codes: 0 success, 2 input validation, 3 no loop-order assignment,
4 numerical precondition failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import intensity as intensity_mod
from . import mtx as mtx_mod
from . import workloads as wl
from .ir import dag_from_json, dag_to_json
from .looporder import InfeasibleEdgeError, NoAssignmentError, assign
from .reuse import classify, edge_table, to_dot
from .traffic import (
    POLICIES,
    MachineConfig,
    geomean,
    prepare_dag,
    reduction_factors,
    sweep_rows,
)

EXIT_VALIDATION = 2
EXIT_NO_ASSIGNMENT = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _load_dag_arg(args):
    if getattr(args, "dag", None):
        try:
            with open(args.dag, "r", encoding="utf-8") as fh:
                text = fh.read()
            return dag_from_json(text)
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.dag}: invalid JSON at line {exc.lineno} "
                           f"column {exc.colno}: {exc.msg}")
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"{args.dag}: {exc}")
    workload = getattr(args, "workload", None)
    if workload == "cg":
        shape = _catalog_shape(args.dataset)
        return wl.build_cg_dag(shape.M, args.n, shape.nnz, args.iters)
    if workload == "gcn":
        shape = _catalog_shape(args.dataset)
        if shape.workload != "gcn":
            raise CliError(f"dataset {shape.name!r} is not a GCN dataset")
        return wl.build_gcn_dag(shape.M, shape.nnz, shape.N, shape.O)
    raise CliError("provide --dag FILE or --workload {cg,gcn} with --dataset")


def _catalog_shape(name):
    if name not in wl.CATALOG:
        raise CliError(f"unknown dataset {name!r}; catalog has "
                       f"{', '.join(sorted(wl.CATALOG))}")
    return wl.CATALOG[name]


def _write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_classify(args) -> int:
    dag = _load_dag_arg(args)
    classify(dag)
    out = args.out or "annotated.json"
    _write_text(out, dag_to_json(dag))
    dot_path = args.dot or os.path.splitext(out)[0] + ".dot"
    _write_text(dot_path, to_dot(dag))
    sys.stdout.write(edge_table(dag))
    sys.stdout.write(f"wrote {out} and {dot_path}\n")
    return 0


def cmd_order(args) -> int:
    dag = _load_dag_arg(args)
    if not any(e.pattern for e in dag.edges):
        classify(dag)
    schedule = None
    if args.epsilon_schedule:
        schedule = [int(tok) for tok in args.epsilon_schedule.split(",")]
    assignment = assign(dag, schedule)
    out = args.out or "orders.json"
    _write_text(out, json.dumps(assignment.to_dict(), indent=2, sort_keys=True))
    sys.stdout.write(f"swizzle_penalty={assignment.swizzle_penalty} "
                     f"attempts={assignment.attempts}\n")
    sys.stdout.write(f"wrote {out}\n")
    return 0


def cmd_traffic(args) -> int:
    if args.dataset == "all":
        datasets = list(wl.CG_DATASETS) + list(wl.GCN_DATASETS)
    elif args.dataset == "all-cg":
        datasets = list(wl.CG_DATASETS)
    else:
        datasets = [s.strip() for s in args.dataset.split(",")]
        for d in datasets:
            _catalog_shape(d)
    policies = args.policies.split(",") if args.policies else list(POLICIES)
    for p in policies:
        if p not in POLICIES:
            raise CliError(f"unknown policy {p!r}")
    sram = [float(s) for s in args.sram_mb.split(",")]
    n_values = [int(s) for s in args.n.split(",")]
    config = MachineConfig(clusters=args.clusters, word_bytes=args.word_bytes)

    rows = sweep_rows(datasets, n_values, sram, policies, args.iters,
                      config=config, values_only=args.values_only,
                      jobs=args.jobs)

    outdir = args.out
    os.makedirs(outdir, exist_ok=True)
    csv_rows = [
        (r["dataset"], r["N"], f"{r['sram_mb']:g}", r["policy"],
         f"{r['dram_mb']:.6f}", f"{r['noc_kb']:.6f}", f"{r['sram_peak_kb']:.6f}")
        for r in rows
    ]
    csv_path = os.path.join(outdir, "traffic.csv")
    _write_csv(csv_path, ("dataset", "N", "sram_mb", "policy", "dram_mb",
                          "noc_kb", "sram_peak_kb"), csv_rows)
    written = [csv_path]

    if args.format == "json":
        detail = [{k: r[k] for k in ("dataset", "N", "sram_mb", "policy",
                                     "dram_read_words", "dram_write_words",
                                     "noc_kb", "sram_peak_kb", "per_node")}
                  for r in rows]
        detail_path = os.path.join(outdir, "traffic_detail.json")
        _write_text(detail_path, json.dumps(detail, indent=2, sort_keys=True))
        written.append(detail_path)

    factors = reduction_factors(rows)
    if factors:
        gm = geomean(factors.values())
        lo = min(factors.values())
        hi = max(factors.values())
        sys.stdout.write(
            f"DRAM reduction vs seq_flex over {len(factors)} cells: "
            f"geomean {gm:.2f}x, range {lo:.2f}x to {hi:.2f}x\n")

    if args.plot:
        from .plots import render_noc_figure, render_traffic_figures

        written.extend(render_traffic_figures(rows, outdir))
        noc_path = render_noc_figure(rows, outdir)
        if noc_path:
            written.append(noc_path)
    for path in written:
        sys.stdout.write(f"wrote {path}\n")
    return 0


def cmd_solve(args) -> int:
    if args.mtx:
        try:
            coo = mtx_mod.parse_matrix_market(args.mtx)
        except mtx_mod.MtxError as exc:
            raise CliError(f"{args.mtx}: {exc}")
        A = mtx_mod.coo_to_csr(coo)
    elif args.dataset:
        shape = _catalog_shape(args.dataset)
        if shape.workload != "cg":
            raise CliError("solve expects a CG dataset")
        A = wl.banded_spd(shape.M, shape.nnz)
    elif args.random_spd:
        A = wl.random_spd(args.random_spd, seed=args.seed)
    else:
        raise CliError("provide --mtx FILE, --dataset NAME or --random-spd SIZE")

    m, nnz, nz_av, symmetric = mtx_mod.matrix_stats(A)
    if A.rows != A.cols:
        raise CliError("matrix must be square", EXIT_NUMERIC)
    if not symmetric:
        if not args.symmetrize_shift:
            raise CliError("matrix is not symmetric; rerun with "
                           "--symmetrize-shift to precondition it", EXIT_NUMERIC)
        A = wl.symmetrize_shift(A)

    rng = np.random.default_rng(args.seed)
    B = rng.standard_normal((A.rows, args.n))
    X0 = np.zeros((A.rows, args.n))
    try:
        trace = wl.run_block_cg(A, B, X0, tol=args.tol, max_iters=args.max_iters)
    except (wl.SingularBlockError, wl.NotConvergedError) as exc:
        raise CliError(str(exc), EXIT_NUMERIC)

    result = {
        "matrix": {"rows": m, "nnz": nnz, "nz_per_row": nz_av},
        "iterations": trace.iterations,
        "converged": trace.converged,
        "residual_norms": trace.residual_norms,
        "macs": trace.macs,
    }
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        _write_text(args.out, text)
        sys.stdout.write(f"wrote {args.out}\n")
    else:
        sys.stdout.write(text + "\n")
    if args.x_out:
        if args.x_out.endswith(".csv"):
            wl.write_dense_csv(args.x_out, trace.X)
        else:
            wl.write_dense_binary(args.x_out, trace.X)
        sys.stdout.write(f"wrote {args.x_out}\n")
    return 0


def cmd_intensity(args) -> int:
    entries = []
    for spec in args.gemm or []:
        m, k, n = (int(s) for s in spec.split(","))
        entries.append(("gemm", m, k, n, None, "isolated",
                        intensity_mod.ai_gemm(m, k, n)))
    for spec in args.spmm or []:
        m, k, n, nnz = (int(s) for s in spec.split(","))
        entries.append(("spmm", m, k, n, nnz, "isolated",
                        intensity_mod.ai_spmm(m, k, n, nnz)))
    for name in args.cg_dataset or []:
        shape = _catalog_shape(name)
        dag = wl.build_cg_dag(shape.M, args.n, shape.nnz, args.iters)
        for mode in ("isolated", "fused"):
            rep = intensity_mod.ai_chain(dag, mode)
            entries.append((f"cg:{name}", shape.M, shape.M, args.n,
                            shape.nnz, mode, rep))
    if not entries:
        raise CliError("nothing to compute; pass --gemm, --spmm or --cg-dataset")

    rows = intensity_mod.intensity_rows(entries)
    outdir = args.out
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "intensity.csv")
    _write_csv(csv_path, ("workload", "M", "K", "N", "nnz", "mode", "macs",
                          "words", "ai"),
               [(r["workload"], r["M"], r["K"], r["N"], r["nnz"], r["mode"],
                 r["macs"], r["words"], f"{r['ai']:.9g}") for r in rows])
    sys.stdout.write(f"wrote {csv_path}\n")
    if args.plot:
        from .plots import render_intensity_figure

        fig = render_intensity_figure(rows, outdir)
        if fig:
            sys.stdout.write(f"wrote {fig}\n")
    return 0


def cmd_ingest(args) -> int:
    paths = []
    for p in args.paths:
        if os.path.isdir(p):
            paths.extend(sorted(
                os.path.join(p, f) for f in os.listdir(p) if f.endswith(".mtx")))
        else:
            paths.append(p)
    if not paths:
        raise CliError("no .mtx files found")
    rows = []
    for path in paths:
        try:
            csr = mtx_mod.coo_to_csr(mtx_mod.parse_matrix_market(path))
        except (mtx_mod.MtxError, OSError) as exc:
            raise CliError(f"{path}: {exc}")
        m, nnz, nz_av, symmetric = mtx_mod.matrix_stats(csr)
        rows.append((os.path.basename(path), m, csr.cols, nnz,
                     f"{nz_av:.6f}", "yes" if symmetric else "no"))
    if args.out:
        _write_csv(args.out, ("file", "rows", "cols", "nnz", "nz_per_row",
                              "symmetric"), rows)
        sys.stdout.write(f"wrote {args.out}\n")
    else:
        for row in rows:
            sys.stdout.write(",".join(str(c) for c in row) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_dag_source(p):
    p.add_argument("--dag", help="DAG JSON file")
    p.add_argument("--workload", choices=("cg", "gcn"))
    p.add_argument("--dataset", help="catalog dataset name")
    p.add_argument("--n", type=int, default=16, help="right-hand-side count")
    p.add_argument("--iters", type=int, default=2, help="unrolled iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dagflow",
        description="Reuse classification, loop ordering and traffic modeling "
                    "for DAGs of tensor operations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="assign reuse patterns to a DAG")
    _add_dag_source(p)
    p.add_argument("--out", help="annotated DAG JSON path")
    p.add_argument("--dot", help="Graphviz output path")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("order", help="assign pipeline-compatible loop orders")
    _add_dag_source(p)
    p.add_argument("--epsilon-schedule", help="comma-separated swizzle budgets")
    p.add_argument("--out", help="assignment JSON path")
    p.set_defaults(func=cmd_order)

    p = sub.add_parser("traffic", help="DRAM/NoC traffic sweep")
    p.add_argument("--dataset", default="all-cg",
                   help="catalog name, comma list, 'all-cg' or 'all'")
    p.add_argument("--n", default="1,8,16", help="comma-separated N sweep")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--sram-mb", default="1,4,16", help="comma-separated MB sweep")
    p.add_argument("--policies", help=f"comma list from {','.join(POLICIES)}")
    p.add_argument("--clusters", type=int, default=16)
    p.add_argument("--word-bytes", type=int, default=4)
    p.add_argument("--values-only", action="store_true",
                   help="exclude sparse index traffic")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default="traffic_out", help="output directory")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_traffic)

    p = sub.add_parser("solve", help="run the functional block solver")
    p.add_argument("--mtx", help="Matrix Market file")
    p.add_argument("--dataset", help="catalog CG dataset (synthetic SPD values)")
    p.add_argument("--random-spd", type=int, help="random SPD of this size")
    p.add_argument("--n", type=int, default=1, help="simultaneous right-hand sides")
    p.add_argument("--tol", type=float, default=1e-20,
                   help="threshold on residual Gram diagonal")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--symmetrize-shift", action="store_true",
                   help="precondition non-symmetric inputs: (A+A^T)/2 + I")
    p.add_argument("--out", help="trace JSON path (default stdout)")
    p.add_argument("--x-out", help="solution matrix path (.csv or binary)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("intensity", help="best-case arithmetic intensity tables")
    p.add_argument("--gemm", action="append", metavar="M,K,N")
    p.add_argument("--spmm", action="append", metavar="M,K,N,NNZ")
    p.add_argument("--cg-dataset", action="append", metavar="NAME")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--iters", type=int, default=1)
    p.add_argument("--out", default="intensity_out", help="output directory")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_intensity)

    p = sub.add_parser("ingest", help="parse Matrix Market files, report stats")
    p.add_argument("paths", nargs="+", help=".mtx files or directories")
    p.add_argument("--out", help="stats CSV path (default stdout)")
    p.set_defaults(func=cmd_ingest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.code
    except (NoAssignmentError, InfeasibleEdgeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NO_ASSIGNMENT
    except (ValueError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
