import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from dagflow.ir import EinsumNode, Rank, TensorRef, build_dag
from dagflow.workloads import _connect


def gemm_node(nid=0, m=64, k=64, n=64, out="Z", a="A", b="B",
              sparse_nnz=None, name=""):
    a_ref = TensorRef(a, ["m", "k"], sparse=sparse_nnz is not None, nnz=sparse_nnz)
    return EinsumNode(
        id=nid, op="tensor_mac",
        inputs=[a_ref, TensorRef(b, ["k", "n"])],
        output=TensorRef(out, ["m", "n"]),
        ranks=[Rank("m", m, "uncontracted"),
               Rank("k", k, "contracted"),
               Rank("n", n, "uncontracted")],
        name=name or f"gemm{nid}")


def single_gemm_dag(m=64, k=64, n=64, sparse_nnz=None):
    return build_dag([gemm_node(m=m, k=k, n=n, sparse_nnz=sparse_nnz)], [])


def chain_dag(sizes, skip=None):
    """Linear chain of square-ish GEMMs T1 = W1*T0, ..., plus an optional
    extra edge (i, j) reading Ti as the addend of node j."""
    nodes = []
    prev = "T0"
    m, n = sizes
    for i in range(4):
        inputs = [TensorRef(f"W{i + 1}", ["o", "j"]), TensorRef(prev, ["j", "n"])]
        if skip is not None and skip[1] == i:
            inputs.append(TensorRef(f"T{skip[0] + 1}", ["o", "n"]))
        nodes.append(EinsumNode(
            id=i, op="tensor_mac", inputs=inputs,
            output=TensorRef(f"T{i + 1}", ["o", "n"]),
            ranks=[Rank("o", m, "uncontracted"),
                   Rank("j", m, "contracted"),
                   Rank("n", n, "uncontracted")],
            name=f"chain{i}"))
        prev = f"T{i + 1}"
    return build_dag(nodes, _connect(nodes))
