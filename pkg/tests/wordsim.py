"""Word-granularity replay oracle for the traffic policies.

Re-implements the policy semantics with explicit per-word bookkeeping (sets
of word ids per tensor, per-word hit/miss tests, word-by-word eviction) so
the analytical prefix arithmetic in dagflow.traffic can be checked exactly.
Shares only the DAG itself and the pure occurrence-transposed predicate with
the implementation under test.
"""

from __future__ import annotations

import random
from bisect import bisect_left, bisect_right

from dagflow.ir import (
    EinsumNode,
    Rank,
    TensorRef,
    build_dag,
    occurrence_transposed,
)
from dagflow.workloads import _connect

_DEAD = float("inf")


def _compulsory(node, ref, values_only=False):
    if ref.sparse:
        if values_only:
            return ref.nnz
        return 2 * ref.nnz + node.rank(ref.ranks[0]).size
    total = 1
    for r in ref.ranks:
        total *= node.rank(r).size
    return total


def replay(dag, config, policy, values_only=False):
    """Returns (dram_read_words, dram_write_words) by explicit word trace."""
    gogeta = policy in ("gogeta_df", "gogeta_map")
    cap = 0 if policy == "seq_flex" else config.sram_bytes // config.word_bytes

    sched = dag.schedule
    pos_of = {nid: i for i, nid in enumerate(sched)}
    uses: dict[str, list[int]] = {}
    for i, nid in enumerate(sched):
        for ref in dag.node(nid).inputs:
            uses.setdefault(ref.name, []).append(i)
    outputs = set(dag.outputs)
    flush = len(sched)
    rf_total = config.rf_bytes_per_pe * config.pes_per_cluster * config.clusters

    def dist(name, p, inclusive):
        lst = uses.get(name, ())
        idx = bisect_left(lst, p) if inclusive else bisect_right(lst, p)
        if idx < len(lst):
            return lst[idx]
        return flush if name in outputs else None

    def words_of(name):
        prod = dag.producer_of(name)
        if prod is not None:
            node = dag.node(prod)
            total = 1
            for r in node.output.ranks:
                total *= node.rank(r).size
            return total
        nid, ref = dag.app_inputs()[name]
        return _compulsory(dag.node(nid), ref, values_only)

    def edge_free(edge):
        if edge.pattern not in ("pipelineable", "pipeline_with_hold"):
            return False
        if pos_of[edge.dest] - pos_of[edge.src] == 1:
            return True
        prod = dag.node(edge.src)
        total = 1
        for r in prod.output.ranks:
            total *= prod.rank(r).size
        return total * config.word_bytes <= rf_total

    resident: dict[str, set[int]] = {}
    dirty: dict[str, bool] = {}
    age: dict[str, int] = {}
    agec = 0
    reads = writes = 0
    touched: set[str] = set()
    served: set[str] = set()

    def used():
        return sum(len(s) for s in resident.values())

    def insert(name, words, is_dirty, evict, p, inclusive):
        nonlocal agec, writes
        agec += 1
        age[name] = agec
        keep = words
        if not evict:
            free = cap - used()
            keep = min(free, words)
            if is_dirty:
                writes += words - keep
        else:
            inc_d = dist(name, p, inclusive)
            inc_d = _DEAD if inc_d is None else inc_d
            while cap - used() < keep:
                cands = []
                for vn, s in resident.items():
                    d = dist(vn, p, inclusive)
                    d = _DEAD if d is None else d
                    cands.append(((d, len(s), -age[vn]), vn, d))
                if not cands:
                    if is_dirty:
                        writes += keep - (cap - used())
                    keep = cap - used()
                    break
                key, vn, vd = max(cands)
                if (inc_d, words, -agec) >= key:
                    spill = keep - (cap - used())
                    if is_dirty:
                        writes += spill
                    keep -= spill
                    break
                victim = resident[vn]
                victim_dirty = dirty[vn] and vd is not _DEAD
                while victim and cap - used() < keep:
                    w = max(victim)
                    victim.discard(w)
                    if victim_dirty:
                        writes += 1
                if not victim:
                    del resident[vn]
        if keep > 0:
            resident[name] = set(range(keep))
            dirty[name] = is_dirty

    for p, nid in enumerate(sched):
        node = dag.node(nid)
        for idx, ref in enumerate(node.inputs):
            w = _compulsory(node, ref, values_only)
            prod = dag.producer_of(ref.name)
            if policy == "seq_flex":
                reads += w
                continue
            if gogeta and prod is not None and edge_free(dag.edge(prod, nid, ref.name)):
                continue
            if not gogeta and occurrence_transposed(node, idx):
                reads += w
                continue
            if prod is None and ref.name not in touched:
                touched.add(ref.name)
                reads += w
                insert(ref.name, w, False, gogeta, p, inclusive=True)
                continue
            have = resident.get(ref.name, set())
            miss = sum(1 for word in range(w) if word not in have)
            if gogeta and prod is not None:
                edge = dag.edge(prod, nid, ref.name)
                if dag.node(prod).parallel_multicast and not edge.is_transitive:
                    if ref.name in served:
                        miss = 0
                    else:
                        served.add(ref.name)
            reads += miss

        out = node.output.name
        w_out = words_of(out)
        if policy == "seq_flex":
            writes += w_out
        elif policy == "seq_overflow":
            insert(out, w_out, True, False, p, inclusive=False)
        else:
            needs_copy = out in outputs or (
                bool(dag.out_edges(nid))
                and any(not edge_free(e) for e in dag.out_edges(nid)))
            if needs_copy:
                insert(out, w_out, True, True, p, inclusive=False)

        if policy != "seq_flex":
            for ref in node.inputs:
                if dist(ref.name, p, inclusive=False) is None and ref.name not in outputs:
                    resident.pop(ref.name, None)
            if dist(out, p, inclusive=False) is None and out not in outputs:
                resident.pop(out, None)

    if policy != "seq_flex":
        for name in dag.outputs:
            writes += len(resident.pop(name, ()))
    return reads, writes


# ---------------------------------------------------------------------------
# Random small matmul-chain DAGs
# ---------------------------------------------------------------------------

_BIG = (1100, 2600)
_SMALL = (1, 2, 3)


def random_small_dag(rng: random.Random, max_nodes: int = 4):
    """Random GEMM-chain DAG with fanout, gram-style transposed reads and an
    occasional sparse input; at most `max_nodes` nodes, 3 ranks per node.
    At most one big rank per pair keeps word-level replay tractable while
    still exercising every dominance class."""
    pool = []  # (name, rows, cols)
    nodes: list[EinsumNode] = []
    fresh = [0]

    def new_input(rows, cols, sparse=False):
        fresh[0] += 1
        name = f"in{fresh[0]}"
        nnz = None
        if sparse:
            nnz = rng.randint(1, rows * cols)
        return (name, rows, cols, sparse, nnz)

    def pick_pair():
        if rng.random() < 0.6:
            pair = [rng.choice(_BIG), rng.choice(_SMALL)]
            rng.shuffle(pair)
            return pair
        return [rng.choice(_SMALL), rng.choice(_SMALL)]

    n_nodes = rng.randint(1, max_nodes)
    for i in range(n_nodes):
        transpose_left = rng.random() < 0.3
        use_pool = pool and rng.random() < 0.6
        if use_pool:
            lt_name, lt_rows, lt_cols = rng.choice(pool)
            left_sparse, left_nnz = False, None
        else:
            lt_rows, lt_cols = pick_pair()
            left_sparse = not transpose_left and rng.random() < 0.25
            lt_name, lt_rows, lt_cols, left_sparse, left_nnz = new_input(
                lt_rows, lt_cols, left_sparse)
        if transpose_left:
            m_size, k_size = lt_cols, lt_rows
        else:
            m_size, k_size = lt_rows, lt_cols

        right_candidates = [t for t in pool if t[1] == k_size
                            and not (m_size in _BIG and t[2] in _BIG)]
        if right_candidates and rng.random() < 0.5:
            rt_name, _, rt_cols = rng.choice(right_candidates)
            right_sparse, right_nnz = False, None
        else:
            if k_size in _BIG or m_size in _BIG:
                rt_cols = rng.choice(_SMALL)
            else:
                rt_cols = rng.choice(_SMALL if rng.random() < 0.6 else _BIG)
            rt_name, _, rt_cols, right_sparse, right_nnz = new_input(k_size, rt_cols)
        n_size = rt_cols

        out_name = f"T{i}"
        left_ranks = ["k", "m"] if transpose_left else ["m", "k"]
        node = EinsumNode(
            id=i, op="tensor_mac",
            inputs=[TensorRef(lt_name, left_ranks, sparse=left_sparse, nnz=left_nnz),
                    TensorRef(rt_name, ["k", "n"], sparse=right_sparse, nnz=right_nnz)],
            output=TensorRef(out_name, ["m", "n"]),
            ranks=[Rank("m", m_size, "uncontracted"),
                   Rank("k", k_size, "contracted"),
                   Rank("n", n_size, "uncontracted")],
            name=f"rand.{i}")
        nodes.append(node)
        pool.append((out_name, m_size, n_size))

    return build_dag(nodes, _connect(nodes))
