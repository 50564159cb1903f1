"""Workload builders and a functional block solver.

Provides the embedded shape catalog for the evaluated datasets, DAG builders
for the iterative solver loop and a two-layer graph-convolution layer, and a
numerically real block conjugate-gradient executor used to ground the DAG
structure in actual arithmetic.

DAG naming convention: solver nodes are named `it<k>.L<line>` after the loop
line they implement (line 2 splits into the `L2a` multiply and the `L2b`
small inverse), with two prologue nodes `pro.R` and `pro.G`.  Tensors carry
an iteration suffix (`S.3`, `R.0`, ...).  The initial search direction
aliases the prologue residual and the previous-iteration Gram matrix aliases
its producer, so neither introduces a copy node.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .ir import EinsumNode, Rank, TensorDag, TensorEdge, TensorRef, build_dag


class SingularBlockError(RuntimeError):
    """A small block solve hit a pivot below threshold (rank-deficient block)."""


class NotConvergedError(RuntimeError):
    """Solver reached max_iters; carries the partial trace."""

    def __init__(self, trace):
        self.trace = trace
        super().__init__(f"not converged after {trace.iterations} iterations")


# ---------------------------------------------------------------------------
# Shape catalog (no downloads needed for traffic analysis)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorkloadShape:
    name: str
    workload: str  # "cg" or "gcn"
    M: int
    nnz: int
    N: int | None = None
    O: int | None = None


CATALOG: dict[str, WorkloadShape] = {
    "aft02": WorkloadShape("aft02", "cg", 8184, 127762),
    "ecology1": WorkloadShape("ecology1", "cg", 1000000, 4996000),
    "barth5": WorkloadShape("barth5", "cg", 15606, 61484),
    "nasa4704": WorkloadShape("nasa4704", "cg", 4704, 104756),
    "cora": WorkloadShape("cora", "gcn", 2708, 9464, N=1433, O=7),
    "protein": WorkloadShape("protein", "gcn", 3786, 14456, N=29, O=2),
}

CG_DATASETS = ("aft02", "ecology1", "barth5", "nasa4704")
GCN_DATASETS = ("cora", "protein")


# ---------------------------------------------------------------------------
# DAG builders
# ---------------------------------------------------------------------------


def _connect(nodes: list[EinsumNode]) -> list[TensorEdge]:
    """Wire producer->consumer edges from matching tensor names.

    Rank maps pair the producer's output ranks with the consumer occurrence
    positionally.  Repeated reads of one tensor inside a node share a single
    edge whose rank_map comes from the first occurrence.
    """
    producer = {n.output.name: n for n in nodes}
    edges: list[TensorEdge] = []
    seen: set[tuple[int, int, str]] = set()
    for node in nodes:
        for ref in node.inputs:
            src = producer.get(ref.name)
            if src is None:
                continue
            key = (src.id, node.id, ref.name)
            if key in seen:
                continue
            seen.add(key)
            edges.append(TensorEdge(
                src=src.id,
                dest=node.id,
                tensor=src.output,
                rank_map=dict(zip(src.output.ranks, ref.ranks)),
            ))
    return edges


def build_cg_dag(M: int, N: int, nnz: int, iters: int = 1) -> TensorDag:
    """Unrolled solver-loop DAG: prologue plus eight nodes per iteration.

    Cross-iteration dependences (search direction, residual, solution and
    Gram matrix) are wired explicitly.  The application inputs are the sparse
    operator `A`, the right-hand side `B` and the initial guess `X.in`; the
    sole application output is the final solution `X.<iters>`.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    nodes: list[EinsumNode] = []
    nid = 0

    def add(name, op, ranks, inputs, output):
        nonlocal nid
        nodes.append(EinsumNode(id=nid, op=op, inputs=inputs, output=output,
                                ranks=ranks, name=name))
        nid += 1
        return output

    def skewed_ranks():
        return [Rank("m", M, "uncontracted"),
                Rank("k", M, "contracted", compressed=True),
                Rank("n", N, "uncontracted")]

    def gram_ranks():
        return [Rank("k", M, "contracted"),
                Rank("np", N, "uncontracted"),
                Rank("n", N, "uncontracted")]

    def update_ranks():
        return [Rank("m", M, "uncontracted"),
                Rank("j", N, "contracted"),
                Rank("n", N, "uncontracted")]

    def small_ranks():
        return [Rank("np", N, "uncontracted"),
                Rank("j", N, "contracted"),
                Rank("n", N, "uncontracted")]

    a_ref = lambda: TensorRef("A", ["m", "k"], sparse=True, nnz=nnz)

    # Prologue: residual of the initial guess and its Gram matrix.  The
    # initial search direction aliases R.0.
    add("pro.R", "tensor_mac", skewed_ranks(),
        [a_ref(), TensorRef("X.in", ["k", "n"]), TensorRef("B", ["m", "n"])],
        TensorRef("R.0", ["m", "n"]))
    add("pro.G", "tensor_mac", gram_ranks(),
        [TensorRef("R.0", ["k", "np"]), TensorRef("R.0", ["k", "n"])],
        TensorRef("Gamma.0", ["np", "n"]))

    p_prev, r_prev, g_prev, x_prev = "R.0", "R.0", "Gamma.0", "X.in"
    for i in range(1, iters + 1):
        s = f"S.{i}"
        add(f"it{i}.L1", "tensor_mac", skewed_ranks(),
            [a_ref(), TensorRef(p_prev, ["k", "n"])],
            TensorRef(s, ["m", "n"]))
        delta = f"Delta.{i}"
        add(f"it{i}.L2a", "tensor_mac", gram_ranks(),
            [TensorRef(p_prev, ["k", "np"]), TensorRef(s, ["k", "n"])],
            TensorRef(delta, ["np", "n"]))
        lam = f"Lambda.{i}"
        add(f"it{i}.L2b", "small_inverse", small_ranks(),
            [TensorRef(delta, ["np", "j"]), TensorRef(g_prev, ["j", "n"])],
            TensorRef(lam, ["np", "n"]))
        x = f"X.{i}"
        add(f"it{i}.L3", "tensor_mac", update_ranks(),
            [TensorRef(p_prev, ["m", "j"]), TensorRef(lam, ["j", "n"]),
             TensorRef(x_prev, ["m", "n"])],
            TensorRef(x, ["m", "n"]))
        r = f"R.{i}"
        add(f"it{i}.L4", "tensor_mac", update_ranks(),
            [TensorRef(s, ["m", "j"]), TensorRef(lam, ["j", "n"]),
             TensorRef(r_prev, ["m", "n"])],
            TensorRef(r, ["m", "n"]))
        g = f"Gamma.{i}"
        add(f"it{i}.L5", "tensor_mac", gram_ranks(),
            [TensorRef(r, ["k", "np"]), TensorRef(r, ["k", "n"])],
            TensorRef(g, ["np", "n"]))
        phi = f"Phi.{i}"
        add(f"it{i}.L6", "small_inverse", small_ranks(),
            [TensorRef(g_prev, ["np", "j"]), TensorRef(g, ["j", "n"])],
            TensorRef(phi, ["np", "n"]))
        p = f"P.{i}"
        add(f"it{i}.L7", "tensor_mac", update_ranks(),
            [TensorRef(p_prev, ["m", "j"]), TensorRef(phi, ["j", "n"]),
             TensorRef(r, ["m", "n"])],
            TensorRef(p, ["m", "n"]))
        p_prev, r_prev, g_prev, x_prev = p, r, g, x

    return build_dag(nodes, _connect(nodes), outputs=[f"X.{iters}"])


def build_gcn_dag(M: int, nnz: int, N: int, O: int) -> TensorDag:
    """One graph-convolution layer: sparse aggregate then dense transform."""
    n1 = EinsumNode(
        id=0, op="tensor_mac",
        inputs=[TensorRef("A", ["m", "k"], sparse=True, nnz=nnz),
                TensorRef("X0", ["k", "n"])],
        output=TensorRef("Z", ["m", "n"]),
        ranks=[Rank("m", M, "uncontracted"),
               Rank("k", M, "contracted", compressed=True),
               Rank("n", N, "uncontracted")],
        name="gcn.L1")
    n2 = EinsumNode(
        id=1, op="tensor_mac",
        inputs=[TensorRef("Z", ["m", "j"]), TensorRef("W", ["j", "o"])],
        output=TensorRef("X1", ["m", "o"]),
        ranks=[Rank("m", M, "uncontracted"),
               Rank("j", N, "contracted"),
               Rank("o", O, "uncontracted")],
        name="gcn.L2")
    nodes = [n1, n2]
    return build_dag(nodes, _connect(nodes), outputs=["X1"])


def build_nn_like_chain(r: int, n: int, depth: int = 5) -> TensorDag:
    """Chain where every step injects a fresh weight matrix.

    Step i computes T_i(r, n) = W_i(r, r) * T_{i-1}(r, n), with T_0 an
    application input.  Models the feed-forward pattern: one new operand per
    operation, each intermediate consumed exactly once.
    """
    nodes = []
    prev = "T0"
    for i in range(depth):
        out = f"T{i + 1}"
        nodes.append(EinsumNode(
            id=i, op="tensor_mac",
            inputs=[TensorRef(f"W{i + 1}", ["o", "j"]), TensorRef(prev, ["j", "n"])],
            output=TensorRef(out, ["o", "n"]),
            ranks=[Rank("o", r, "uncontracted"),
                   Rank("j", r, "contracted"),
                   Rank("n", n, "uncontracted")],
            name=f"nn.L{i + 1}"))
        prev = out
    return build_dag(nodes, _connect(nodes), outputs=[prev])


def build_hpc_like_chain(r: int, n: int, depth: int = 5) -> TensorDag:
    """Chain with only three application inputs and one output.

    Step i multiplies one of two reused square operators into the running
    intermediate: T_1 = A * T_0, then alternately C and A.  Models the solver
    pattern where almost all traffic is intermediate tensors.
    """
    nodes = []
    prev = "T0"
    for i in range(depth):
        op_name = "A" if i % 2 == 0 else "C"
        out = f"T{i + 1}"
        nodes.append(EinsumNode(
            id=i, op="tensor_mac",
            inputs=[TensorRef(op_name, ["o", "j"]), TensorRef(prev, ["j", "n"])],
            output=TensorRef(out, ["o", "n"]),
            ranks=[Rank("o", r, "uncontracted"),
                   Rank("j", r, "contracted"),
                   Rank("n", n, "uncontracted")],
            name=f"hpc.L{i + 1}"))
        prev = out
    return build_dag(nodes, _connect(nodes), outputs=[prev])


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------


@dataclass
class CsrMatrix:
    rows: int
    cols: int
    row_starts: np.ndarray
    col_ids: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.row_starts[-1])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for r in range(self.rows):
            s, e = self.row_starts[r], self.row_starts[r + 1]
            out[r, self.col_ids[s:e]] += self.values[s:e]
        return out


@dataclass
class DenseMatrix:
    rows: int
    cols: int
    values: np.ndarray

    @classmethod
    def from_array(cls, arr) -> "DenseMatrix":
        a = np.ascontiguousarray(np.atleast_2d(np.asarray(arr, dtype=np.float64)))
        return cls(a.shape[0], a.shape[1], a)


def _as_array(mat) -> np.ndarray:
    if isinstance(mat, DenseMatrix):
        return mat.values
    return np.atleast_2d(np.asarray(mat, dtype=np.float64))


def dense_to_csr(arr: np.ndarray, tol: float = 0.0) -> CsrMatrix:
    a = np.asarray(arr, dtype=np.float64)
    rows, cols = a.shape
    mask = np.abs(a) > tol
    counts = mask.sum(axis=1)
    row_starts = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(counts, out=row_starts[1:])
    col_ids = np.nonzero(mask)[1].astype(np.int64)
    values = a[mask]
    return CsrMatrix(rows, cols, row_starts, col_ids, values)


def spmm_csr(A: CsrMatrix, D) -> DenseMatrix:
    """Sparse-times-dense with exact row-wise accumulation."""
    dv = _as_array(D)
    if A.cols != dv.shape[0]:
        raise ValueError(f"shape mismatch: {A.rows}x{A.cols} @ {dv.shape}")
    out = np.zeros((A.rows, dv.shape[1]))
    for r in range(A.rows):
        s, e = A.row_starts[r], A.row_starts[r + 1]
        if e > s:
            out[r] = A.values[s:e] @ dv[A.col_ids[s:e], :]
    return DenseMatrix.from_array(out)


def solve_block(mat: np.ndarray, rhs: np.ndarray, counter=None) -> np.ndarray:
    """Gaussian elimination with partial pivoting for the small blocks.

    Raises SingularBlockError when a pivot falls below 1e-12 times the
    Frobenius norm of the block.  When `counter` is a one-element list, every
    scalar multiply and divide increments it.
    """
    a = np.array(mat, dtype=np.float64)
    b = np.array(rhs, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    n = a.shape[0]
    nrhs = b.shape[1]
    threshold = 1e-12 * max(np.linalg.norm(a), 1e-300)
    macs = 0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) < threshold:
            raise SingularBlockError(f"pivot {a[p, k]:.3e} below threshold")
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
        for i in range(k + 1, n):
            m = a[i, k] / a[k, k]
            macs += 1
            a[i, k + 1:] -= m * a[k, k + 1:]
            macs += n - 1 - k
            b[i] -= m * b[k]
            macs += nrhs
    x = np.zeros((n, nrhs))
    for i in range(n - 1, -1, -1):
        acc = b[i] - a[i, i + 1:] @ x[i + 1:]
        macs += (n - 1 - i) * nrhs
        x[i] = acc / a[i, i]
        macs += nrhs
    if counter is not None:
        counter[0] += macs
    return x


@dataclass
class CgTrace:
    iterations: int
    residual_norms: list[float] = field(default_factory=list)
    converged: bool = False
    X: DenseMatrix | None = None
    macs: int = 0
    history: list[dict] | None = None


def run_block_cg(A: CsrMatrix, B, X0, tol: float = 1e-20,
                 max_iters: int = 1000, keep_history: bool = False) -> CgTrace:
    """Block conjugate gradient over N simultaneous right-hand sides.

    Follows the solver loop exactly: sparse multiply, Gram matrix, two small
    block solves (never an explicit inverse), rank-1-block updates of the
    solution, residual and search direction.  Convergence requires every
    diagonal entry of the residual Gram matrix to fall to `tol` or below,
    so `tol` is compared against squared column norms.
    """
    if A.rows != A.cols:
        raise ValueError("A must be square")
    b = _as_array(B).copy()
    x = _as_array(X0).copy()
    m, n = b.shape
    if x.shape != (m, n) or A.rows != m:
        raise ValueError("B and X0 must both be M x N")

    macs = [0]
    spmm_macs = lambda: int(A.nnz) * n

    r = b - spmm_csr(A, x).values
    macs[0] += spmm_macs()
    gamma = r.T @ r
    macs[0] += m * n * n
    p = r.copy()

    trace = CgTrace(iterations=0, history=[] if keep_history else None)
    for _ in range(max_iters):
        s = spmm_csr(A, p).values
        macs[0] += spmm_macs()
        delta = p.T @ s
        macs[0] += m * n * n
        lam = solve_block(delta, gamma, macs)
        x = x + p @ lam
        macs[0] += m * n * n
        r = r - s @ lam
        macs[0] += m * n * n
        gamma_prev = gamma
        gamma = r.T @ r
        macs[0] += m * n * n
        trace.iterations += 1
        trace.residual_norms.append(float(np.linalg.norm(r)))
        if keep_history:
            trace.history.append({"S": s.copy(), "Delta": delta.copy(),
                                  "Lambda": lam.copy(), "X": x.copy(),
                                  "R": r.copy(), "Gamma": gamma.copy()})
        if np.all(np.diag(gamma) <= tol):
            trace.converged = True
            break
        phi = solve_block(gamma_prev, gamma, macs)
        p = r + p @ phi
        macs[0] += m * n * n
        if keep_history:
            trace.history[-1]["Phi"] = phi.copy()
            trace.history[-1]["P"] = p.copy()

    trace.X = DenseMatrix.from_array(x)
    trace.macs = macs[0]
    if not trace.converged:
        raise NotConvergedError(trace)
    return trace


def symmetrize_shift(A: CsrMatrix, delta: float = 1.0) -> CsrMatrix:
    """Preprocessing only: (A + A^T)/2 + delta*I as CSR."""
    dense = A.to_dense()
    sym = (dense + dense.T) / 2.0 + delta * np.eye(A.rows)
    return dense_to_csr(sym)


def random_spd(n: int, seed: int = 0, shift: float | None = None) -> CsrMatrix:
    """Dense random SPD matrix G^T G + shift*I, stored as CSR."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, n))
    a = g.T @ g + (float(n) if shift is None else shift) * np.eye(n)
    return dense_to_csr(a)


def banded_spd(M: int, nnz: int) -> CsrMatrix:
    """Deterministic symmetric positive-definite banded matrix with exactly
    `nnz` stored nonzeros (diagonal plus mirrored off-diagonal bands).

    Requires nnz >= M and nnz - M even, which holds for the catalog shapes.
    """
    if nnz < M or (nnz - M) % 2 != 0:
        raise ValueError("nnz must be >= M with nnz - M even")
    pairs = (nnz - M) // 2
    cols: list[list[int]] = [[] for _ in range(M)]
    d = 1
    remaining = pairs
    while remaining > 0:
        band = min(remaining, M - d)
        if band <= 0:
            raise ValueError("cannot place requested nnz in bands")
        for i in range(band):
            cols[i].append(i + d)
            cols[i + d].append(i)
        remaining -= band
        d += 1
    row_starts = np.zeros(M + 1, dtype=np.int64)
    col_ids = []
    values = []
    for i in range(M):
        entries = sorted(cols[i] + [i])
        row_starts[i + 1] = row_starts[i] + len(entries)
        for c in entries:
            col_ids.append(c)
            # Strict diagonal dominance keeps the matrix SPD.
            values.append(float(len(entries) + 1) if c == i else -1.0)
    return CsrMatrix(M, M, row_starts, np.array(col_ids, dtype=np.int64),
                     np.array(values))


# ---------------------------------------------------------------------------
# Dense matrix file formats
# ---------------------------------------------------------------------------

_DENSE_MAGIC = b"DMX1"


def write_dense_csv(path, mat) -> None:
    np.savetxt(path, _as_array(mat), delimiter=",", fmt="%.17g")


def read_dense_csv(path) -> DenseMatrix:
    return DenseMatrix.from_array(np.loadtxt(path, delimiter=",", ndmin=2))


def write_dense_binary(path, mat) -> None:
    a = _as_array(mat)
    with open(path, "wb") as fh:
        fh.write(_DENSE_MAGIC)
        fh.write(struct.pack("<II", a.shape[0], a.shape[1]))
        fh.write(a.astype("<f8").tobytes())


def read_dense_binary(path) -> DenseMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DENSE_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    return DenseMatrix.from_array(data.reshape(rows, cols))
