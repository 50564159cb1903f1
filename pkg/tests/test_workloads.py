import numpy as np
import pytest

from dagflow.intensity import chain_multiplications
from dagflow.workloads import (
    CATALOG,
    NotConvergedError,
    SingularBlockError,
    banded_spd,
    build_cg_dag,
    build_gcn_dag,
    dense_to_csr,
    random_spd,
    read_dense_binary,
    read_dense_csv,
    run_block_cg,
    spmm_csr,
    symmetrize_shift,
    write_dense_binary,
    write_dense_csv,
)


def test_worked_2x2_example():
    A = dense_to_csr(np.array([[4.0, 1.0], [1.0, 3.0]]))
    trace = run_block_cg(A, [[1.0], [2.0]], [[0.0], [0.0]], tol=1e-24, max_iters=8)
    assert trace.converged
    x = trace.X.values.ravel()
    assert np.abs(x - np.array([1.0 / 11.0, 7.0 / 11.0])).max() < 1e-8


def test_identity_converges_in_one_iteration():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((6, 2))
    A = dense_to_csr(np.eye(6))
    trace = run_block_cg(A, B, np.zeros((6, 2)), tol=1e-20, max_iters=4)
    assert trace.converged and trace.iterations == 1
    assert np.allclose(trace.X.values, B, atol=1e-12)


def test_random_spd_block_solve():
    A = random_spd(64, seed=7)
    rng = np.random.default_rng(3)
    B = rng.standard_normal((64, 8))
    trace = run_block_cg(A, B, np.zeros((64, 8)), tol=1e-24, max_iters=400)
    direct = np.linalg.solve(A.to_dense(), B)
    assert np.abs(trace.X.values - direct).max() < 1e-6
    norms = trace.residual_norms
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_residual_identity_per_iteration():
    A = random_spd(16, seed=2)
    rng = np.random.default_rng(5)
    B = rng.standard_normal((16, 4))
    trace = run_block_cg(A, B, np.zeros((16, 4)), tol=1e-26, max_iters=60,
                         keep_history=True)
    dense = A.to_dense()
    for step in trace.history:
        explicit = np.linalg.norm(B - dense @ step["X"])
        assert abs(explicit - np.linalg.norm(step["R"])) < 1e-8


def test_matches_independent_dense_reference():
    # Dense re-implementation of the same update chain, blocks solved with
    # the library solver rather than our elimination.
    A = random_spd(16, seed=9)
    Ad = A.to_dense()
    rng = np.random.default_rng(1)
    B = rng.standard_normal((16, 4))
    X = np.zeros((16, 4))
    R = B - Ad @ X
    G = R.T @ R
    P = R.copy()
    reference = []
    for _ in range(5):
        S = Ad @ P
        D = P.T @ S
        L = np.linalg.solve(D, G)
        X = X + P @ L
        R = R - S @ L
        G_prev = G
        G = R.T @ R
        reference.append((X.copy(), R.copy()))
        Phi = np.linalg.solve(G_prev, G)
        P = R + P @ Phi
    with pytest.raises(NotConvergedError) as info:
        run_block_cg(A, B, np.zeros((16, 4)), tol=0.0, max_iters=5,
                     keep_history=True)
    history = info.value.trace.history
    assert len(history) == 5
    for (x_ref, r_ref), step in zip(reference, history):
        assert np.abs(step["X"] - x_ref).max() < 1e-10
        assert np.abs(step["R"] - r_ref).max() < 1e-10


def test_iteration_bound_single_rhs():
    m = 24
    A = random_spd(m, seed=4)
    rng = np.random.default_rng(8)
    B = rng.standard_normal((m, 1))
    trace = run_block_cg(A, B, np.zeros((m, 1)), tol=1e-18, max_iters=2 * m)
    assert trace.converged
    assert trace.iterations <= 2 * m


def test_not_converged_carries_trace():
    A = random_spd(12, seed=3)
    rng = np.random.default_rng(2)
    B = rng.standard_normal((12, 2))
    with pytest.raises(NotConvergedError) as info:
        run_block_cg(A, B, np.zeros((12, 2)), tol=0.0, max_iters=3)
    assert info.value.trace.iterations == 3


def test_singular_block_error_on_dependent_rhs():
    A = dense_to_csr(np.eye(5))
    B = np.ones((5, 2))  # identical columns make the direction block singular
    with pytest.raises(SingularBlockError):
        run_block_cg(A, B, np.zeros((5, 2)), tol=1e-20, max_iters=3)


def test_mac_counter_matches_dag_prediction():
    A = random_spd(16, seed=6)
    rng = np.random.default_rng(7)
    B = rng.standard_normal((16, 4))
    iters = 3
    with pytest.raises(NotConvergedError) as info:
        run_block_cg(A, B, np.zeros((16, 4)), tol=0.0, max_iters=iters)
    trace = info.value.trace
    dag = build_cg_dag(16, 4, A.nnz, iters=iters)
    assert trace.macs == chain_multiplications(dag)


def test_spmm_identity_and_hand_values():
    I = dense_to_csr(np.eye(3))
    D = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(spmm_csr(I, D).values, D)
    A = dense_to_csr(np.array([[4.0, 1.0], [1.0, 3.0]]))
    out = spmm_csr(A, np.array([[1.0], [2.0]]))
    assert np.array_equal(out.values, np.array([[6.0], [7.0]]))


def test_spmm_empty_row():
    A = dense_to_csr(np.array([[0.0, 0.0], [1.0, 2.0]]))
    out = spmm_csr(A, np.array([[3.0], [4.0]]))
    assert np.array_equal(out.values, np.array([[0.0], [11.0]]))


def test_spmm_shape_mismatch():
    A = dense_to_csr(np.eye(3))
    with pytest.raises(ValueError):
        spmm_csr(A, np.zeros((2, 2)))


def test_cg_dag_structure_one_iteration():
    dag = build_cg_dag(8184, 16, 127762, iters=1)
    assert len(dag.nodes) == 10  # 2 prologue + 8 loop nodes
    by_name = {n.name: n.id for n in dag.nodes}
    for src, dest, tensor in (
            ("it1.L1", "it1.L2a", "S.1"), ("it1.L1", "it1.L4", "S.1"),
            ("it1.L2b", "it1.L3", "Lambda.1"), ("it1.L2b", "it1.L4", "Lambda.1"),
            ("it1.L4", "it1.L5", "R.1"), ("it1.L4", "it1.L7", "R.1")):
        dag.edge(by_name[src], by_name[dest], tensor)
    assert dag.outputs == ["X.1"]


def test_cg_dag_cross_iteration_edges():
    dag = build_cg_dag(8184, 16, 127762, iters=2)
    l7 = dag.node_by_name("it1.L7").id
    dests = {dag.node(e.dest).name for e in dag.out_edges(l7)}
    assert dests == {"it2.L1", "it2.L2a", "it2.L3", "it2.L7"}


def test_gcn_dag_structure():
    for name in ("cora", "protein"):
        s = CATALOG[name]
        dag = build_gcn_dag(s.M, s.nnz, s.N, s.O)
        assert len(dag.nodes) == 2
        assert dag.edge(0, 1, "Z") is not None
        assert dag.outputs == ["X1"]


def test_banded_spd_exact_counts_and_solvability():
    A = banded_spd(500, 3000)
    assert A.nnz == 3000
    dense = A.to_dense()
    assert np.array_equal(dense, dense.T)
    rng = np.random.default_rng(11)
    B = rng.standard_normal((500, 2))
    trace = run_block_cg(A, B, np.zeros((500, 2)), tol=1e-22, max_iters=1000)
    assert trace.converged


def test_symmetrize_shift():
    rng = np.random.default_rng(13)
    raw = rng.standard_normal((10, 10))
    fixed = symmetrize_shift(dense_to_csr(raw), delta=10.0)
    dense = fixed.to_dense()
    assert np.abs(dense - dense.T).max() < 1e-12


def test_dense_matrix_file_round_trips(tmp_path):
    rng = np.random.default_rng(17)
    mat = rng.standard_normal((5, 3))
    csv_path = tmp_path / "m.csv"
    bin_path = tmp_path / "m.bin"
    write_dense_csv(csv_path, mat)
    write_dense_binary(bin_path, mat)
    assert np.abs(read_dense_csv(csv_path).values - mat).max() < 1e-15
    assert np.array_equal(read_dense_binary(bin_path).values, mat)
