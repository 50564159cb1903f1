import random

import pytest

from conftest import single_gemm_dag
from dagflow.ir import compulsory_words, occurrence_transposed
from dagflow.looporder import NoAssignmentError, assign
from dagflow.reuse import classify
from dagflow.traffic import (
    MachineConfig,
    MissingAnnotationError,
    SramState,
    noc_traversals,
    prepare_dag,
    simulate,
    sram_step,
)
from dagflow.workloads import build_cg_dag, build_gcn_dag
from wordsim import random_small_dag


def cfg_mb(mb, **kw):
    return MachineConfig(sram_bytes=int(mb * 1024 * 1024), **kw)


def prepared_cg(m=8184, n=16, nnz=127762, iters=2):
    dag = build_cg_dag(m, n, nnz, iters)
    assignment = prepare_dag(dag)
    return dag, assignment


def test_single_gemm_seq_flex_hand_count():
    dag = single_gemm_dag(4, 4, 4)
    rep = simulate(dag, None, MachineConfig(), "seq_flex")
    assert rep.dram_words == 48
    assert rep.dram_bytes == 192
    assert rep.sram_peak_words == 0


def test_ideal_counts_inputs_once_outputs_once():
    dag, asg = prepared_cg(iters=1)
    rep = simulate(dag, asg, cfg_mb(4), "ideal")
    a = 2 * 127762 + 8184
    s = 8184 * 16
    assert rep.dram_read_words == a + 2 * s
    assert rep.dram_write_words == s
    assert rep.dram_words == 656540


def test_values_only_toggle():
    dag, asg = prepared_cg(iters=1)
    full = simulate(dag, asg, cfg_mb(4), "ideal").dram_words
    vo = simulate(dag, asg, cfg_mb(4), "ideal", values_only=True).dram_words
    assert full - vo == (2 * 127762 + 8184) - 127762


def test_missing_annotation_error():
    dag = build_cg_dag(8184, 16, 127762, 1)
    with pytest.raises(MissingAnnotationError):
        simulate(dag, None, cfg_mb(4), "gogeta_df")


# ---------------------------------------------------------------------------
# SRAM replacement
# ---------------------------------------------------------------------------


def test_sram_step_no_eviction_when_fitting():
    state = SramState(1000)
    state, w, _ = sram_step(state, ("produce", "X", 400), {"X": 9})
    assert w == 0 and state.resident("X") == 400


def test_sram_step_far_tensor_loses_its_tail():
    # X is resident with a far next use; R arrives with a near one: the tail
    # of X is evicted (dirty, still needed -> written) and R sits whole.
    state = SramState(1000)
    sram_step(state, ("produce", "X", 800), {"X": 9, "R": 2})
    state, written, _ = sram_step(state, ("produce", "R", 600), {"X": 9, "R": 2})
    assert state.resident("R") == 600
    assert state.resident("X") == 400
    assert written == 400


def test_sram_step_self_spill_when_farthest():
    # The incoming tensor has the farthest next use, so its own overflow
    # goes to DRAM and the resident tensor is untouched.
    state = SramState(1000)
    sram_step(state, ("produce", "R", 800), {"X": 9, "R": 2})
    state, written, _ = sram_step(state, ("produce", "X", 600), {"X": 9, "R": 2})
    assert state.resident("R") == 800
    assert state.resident("X") == 200
    assert written == 400


def test_sram_step_consume_hits_prefix():
    state = SramState(500)
    sram_step(state, ("produce", "X", 800), {"X": 1})
    _, _, misses = sram_step(state, ("consume", "X", 800), {})
    assert misses == 300


def test_parallel_halves_match_serial_proportions():
    dist = {"X": 9, "R": 2}
    serial = SramState(1000)
    sram_step(serial, ("produce", "X", 800), dist)
    sram_step(serial, ("produce", "R", 600), dist)

    halves = SramState(1000)
    sram_step(halves, ("produce", "X", 400), dist)
    sram_step(halves, ("produce", "R", 300), dist)
    # second half of each tensor arrives as tail growth
    halves.free("X2")  # no-op, keeps intent explicit
    written = 0
    # grow by reinserting under fresh names sized as the remainder, then
    # check proportions: the model tracks prefixes, so emulate the growth by
    # a fresh state primed with the interleaved totals.
    inter = SramState(1000)
    sram_step(inter, ("produce", "X", 400), dist)
    _, w1, _ = sram_step(inter, ("produce", "R", 600), dist)
    written += w1
    assert serial.resident("R") == 600
    assert inter.resident("R") == 600
    assert serial.resident("X") == inter.resident("X")


def test_dead_resident_words_drop_for_free():
    state = SramState(100)
    sram_step(state, ("produce", "X", 100), {"X": None})
    state, written, _ = sram_step(state, ("produce", "R", 60), {"R": 3})
    assert written == 0  # X had no future use, dropping it costs nothing
    assert state.resident("R") == 60


# ---------------------------------------------------------------------------
# Policy behavior
# ---------------------------------------------------------------------------


def test_policy_ordering_on_workloads():
    cases = [prepared_cg(iters=3), prepared_cg(m=15606, n=8, nnz=61484, iters=3)]
    g = build_gcn_dag(2708, 9464, 1433, 7)
    cases.append((g, prepare_dag(g)))
    for dag, asg in cases:
        for mb in (0.25, 1, 4, 16):
            cfg = cfg_mb(mb)
            vals = {p: simulate(dag, asg, cfg, p).dram_words
                    for p in ("ideal", "gogeta_df", "gogeta_map",
                              "seq_overflow", "seq_flex")}
            assert vals["ideal"] <= vals["gogeta_map"]
            assert vals["gogeta_map"] == vals["gogeta_df"]
            assert vals["gogeta_map"] <= vals["seq_overflow"]
            assert vals["seq_overflow"] <= vals["seq_flex"]


def test_capacity_never_exceeded():
    dag, asg = prepared_cg(iters=2)
    for mb in (0.5, 1, 4):
        cfg = cfg_mb(mb)
        for policy in ("seq_overflow", "gogeta_df"):
            rep = simulate(dag, asg, cfg, policy)
            assert rep.sram_peak_words <= cfg.sram_words


def test_infinite_sram_limits():
    dag, asg = prepared_cg(m=5000, n=4, nnz=20000, iters=3)
    footprint = sum(dag.tensor_words(n.output.name) for n in dag.nodes)
    footprint += sum(dag.tensor_words(name) for name in dag.app_inputs())
    cfg = MachineConfig(sram_bytes=10 * footprint * 4)
    ideal = simulate(dag, asg, cfg, "ideal").dram_words
    gog = simulate(dag, asg, cfg, "gogeta_map").dram_words
    assert gog == ideal
    # seq_overflow keeps only the transposed re-reads above the ideal.
    so = simulate(dag, asg, cfg, "seq_overflow").dram_words
    transposed = 0
    for nid in dag.schedule:
        node = dag.node(nid)
        for idx, ref in enumerate(node.inputs):
            if occurrence_transposed(node, idx):
                transposed += compulsory_words(node, ref)
    assert so == ideal + transposed


def test_transposed_reads_bypass_residency_in_baselines():
    dag, asg = prepared_cg(iters=1)
    cfg = cfg_mb(64)  # everything fits
    so = simulate(dag, asg, cfg, "seq_overflow")
    gm = simulate(dag, asg, cfg, "gogeta_map")
    assert so.dram_read_words > gm.dram_read_words


def test_seq_overflow_never_evicts():
    # Producing past capacity spills the incoming tail even though an
    # already-resident tensor has a farther next use.
    dag, asg = prepared_cg(iters=1)
    cap_words = 300000  # holds A plus a bit
    cfg = MachineConfig(sram_bytes=cap_words * 4)
    rep = simulate(dag, asg, cfg, "seq_overflow")
    assert rep.dram_write_words > 0


def test_per_node_breakdown_sums_to_totals():
    dag, asg = prepared_cg(iters=2)
    for policy in ("seq_flex", "seq_overflow", "gogeta_df"):
        rep = simulate(dag, asg, cfg_mb(1), policy)
        assert sum(r["dram_read_words"] for r in rep.per_node) == rep.dram_read_words
        assert sum(r["dram_write_words"] for r in rep.per_node) == rep.dram_write_words


def test_seq_flex_matches_compulsory_formula():
    rng = random.Random(21)
    for _ in range(20):
        dag = random_small_dag(rng)
        reads = writes = 0
        for nid in dag.schedule:
            node = dag.node(nid)
            reads += sum(compulsory_words(node, ref) for ref in node.inputs)
            writes += dag.tensor_words(node.output.name)
        rep = simulate(dag, None, cfg_mb(1), "seq_flex")
        assert rep.dram_read_words == reads
        assert rep.dram_write_words == writes


# ---------------------------------------------------------------------------
# NoC accounting
# ---------------------------------------------------------------------------


def test_noc_pair_formulas():
    dag, asg = prepared_cg(n=8, iters=2)
    l4 = dag.node_by_name("it1.L4").id
    l5 = dag.node_by_name("it1.L5").id
    pair = [dag.edge(l4, l5, "R.1")]
    cfg = MachineConfig()
    assert noc_traversals(dag, asg, cfg, "gogeta_map", edges=pair) == 2 * 8 * 8 * 15
    assert noc_traversals(dag, asg, cfg, "gogeta_df", edges=pair) == 8184 * 8
    one = MachineConfig(clusters=1)
    assert noc_traversals(dag, asg, one, "gogeta_map", edges=pair) == 0


def test_noc_whole_dag_df_sums_pipelined_tensors():
    dag, asg = prepared_cg(n=8, iters=1)
    expected = sum(dag.tensor_words(e.tensor.name) for e in dag.edges
                   if e.pattern in ("pipelineable", "pipeline_with_hold"))
    assert noc_traversals(dag, asg, MachineConfig(), "gogeta_df") == expected


def test_noc_map_far_below_df_for_skewed_workloads():
    dag, asg = prepared_cg(n=8, iters=2)
    cfg = MachineConfig()
    assert noc_traversals(dag, asg, cfg, "gogeta_map") < \
        noc_traversals(dag, asg, cfg, "gogeta_df") / 10
