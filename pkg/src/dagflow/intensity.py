"""Best-case arithmetic intensity, counted exactly.

All counts are exact integers and every intensity is an exact rational
(multiply-accumulates per word moved, precision-agnostic).  Byte conversion
belongs to the traffic model, not here.

Two chain modes:
  isolated  each operation charged its own compulsory set (every input
            occurrence plus the output, sparse operands in compressed form)
  fused     each application input charged once and each final output once;
            intermediates move for free
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .ir import EinsumNode, TensorDag, compulsory_words
from .workloads import build_cg_dag


@dataclass
class IntensityReport:
    multiplications: int
    accesses: int

    @property
    def ai(self) -> Fraction:
        return Fraction(self.multiplications, self.accesses)


def ai_gemm(M: int, K: int, N: int) -> IntensityReport:
    """Dense multiply: M*K*N MACs over one read of each operand and one
    write of the output."""
    return IntensityReport(M * K * N, M * K + K * N + M * N)


def ai_spmm(M: int, K: int, N: int, nnz: int) -> IntensityReport:
    """Sparse-times-dense with the sparse operand in compressed row form:
    values + column ids + row entries (2*nnz + M) for the sparse side."""
    if nnz > M * K:
        raise ValueError("nnz exceeds dense size")
    return IntensityReport(nnz * N, 2 * nnz + M + N * K + M * N)


def elimination_mult_count(n: int, nrhs: int) -> int:
    """Multiplies and divides in a pivoted elimination solve of an n x n
    system with nrhs right-hand sides (matches solve_block's counting)."""
    t = n * (n - 1) // 2                # sum 1..n-1
    q = (n - 1) * n * (2 * n - 1) // 6  # sum of squares 1..n-1
    return q + t * (1 + 2 * nrhs) + n * nrhs


def node_multiplications(node: EinsumNode) -> int:
    """MAC count of one operation.

    Dense multiply/adds cost the product of all rank sizes; one sparse input
    replaces its own ranks' product by its nonzero count.  Small inverses
    cost a pivoted elimination solve.  A pure element-wise add costs its
    output size.
    """
    if node.op == "small_inverse":
        n = node.rank(node.output.ranks[0]).size
        nrhs = node.rank(node.output.ranks[1]).size
        return elimination_mult_count(n, nrhs)
    if node.op == "tensor_add":
        total = 1
        for rname in node.output.ranks:
            total *= node.rank(rname).size
        return total
    total = 1
    for r in node.ranks:
        total *= r.size
    sparse = [ref for ref in node.inputs if ref.sparse]
    if len(sparse) > 1:
        raise ValueError("at most one sparse input per node is supported")
    if sparse:
        ref = sparse[0]
        dense_span = 1
        for rname in ref.ranks:
            dense_span *= node.rank(rname).size
        total = total // dense_span * ref.nnz
    return total


def node_isolated_accesses(node: EinsumNode, values_only: bool = False) -> int:
    reads = sum(compulsory_words(node, ref, values_only) for ref in node.inputs)
    return reads + compulsory_words(node, node.output, values_only)


def chain_multiplications(dag: TensorDag) -> int:
    return sum(node_multiplications(n) for n in dag.nodes)


def ai_chain(dag: TensorDag, mode: str, values_only: bool = False) -> IntensityReport:
    """Chain intensity with (`fused`) or without (`isolated`) reuse between
    operations.  Multiplications are identical in both modes."""
    mults = chain_multiplications(dag)
    if mode == "isolated":
        accesses = sum(node_isolated_accesses(n, values_only) for n in dag.nodes)
    elif mode == "fused":
        accesses = 0
        for name, (nid, ref) in sorted(dag.app_inputs().items()):
            accesses += compulsory_words(dag.node(nid), ref, values_only)
        for name in dag.outputs:
            accesses += dag.tensor_words(name)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return IntensityReport(mults, accesses)


def ai_cg(M: int, N: int, nnz: int, iters: int = 1,
          values_only: bool = False) -> IntensityReport:
    """Fused intensity of the unrolled solver loop.

    Accesses are independent of the unroll depth (the operator, right-hand
    side and initial guess enter once; the final solution leaves once), so
    intensity grows linearly with `iters`.  Inverse-node operand traffic is
    included via the isolated/fused accounting of the full DAG.
    """
    dag = build_cg_dag(M, N, nnz, iters)
    return ai_chain(dag, "fused", values_only)


def intensity_rows(entries) -> list[dict]:
    """Rows for the CSV emitter: one dict per (workload, shape, mode)."""
    rows = []
    for workload, M, K, N, nnz, mode, report in entries:
        rows.append({
            "workload": workload,
            "M": M,
            "K": K,
            "N": N,
            "nnz": "" if nnz is None else nnz,
            "mode": mode,
            "macs": report.multiplications,
            "words": report.accesses,
            "ai": float(report.ai),
        })
    return rows
