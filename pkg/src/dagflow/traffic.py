"""Analytical DRAM, SRAM and inter-cluster NoC traffic model.

Five execution policies over one schedule walk:

  seq_flex      op-by-op; every input occurrence read from DRAM and every
                output written to DRAM (compulsory sizes, compressed-row rule
                for sparse operands); no SRAM at all.
  seq_overflow  outputs stream into the SRAM in FIFO order; whatever does not
                fit spills to DRAM at production.  Reads hit the resident
                prefix of a tensor and fetch the rest from DRAM.  Nothing is
                ever evicted to make room.  Transposed reads cannot use the
                resident copy (layout mismatch) and always stream from DRAM.
  gogeta_df     reuse-pattern aware: pipelineable edges move their tensor
                stage-to-stage, eliminating both the stored copy and the
                consumer read; hold edges keep the tensor on-chip and read it
                for free; writeback and sequential edges use normal stored
                copies.  Multicast fan-outs charge one read for all parallel
                consumers.  A consistent zero-swizzle layout lets transposed
                reads share the base tensor's residency.  On overflow the
                SRAM evicts tail words of the resident tensor with the
                farthest next use.
  gogeta_map    identical DRAM accounting; NoC accounting switches from
                whole-tensor transfers per pipelined edge to broadcast plus
                reduction of the small shared tensors across clusters.
  ideal         infinite SRAM: each application input once, final outputs
                once.

Word-level conservation: every produced word is counted once per lifetime
segment (pipelined away, SRAM resident, or spilled).  Spilled dirty words are
written at spill/eviction time and re-read from DRAM at each later use.
Application inputs are clean: dropping them from SRAM costs nothing.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

from .ir import (
    SMALL_RANK_LIMIT,
    TensorDag,
    compulsory_words,
    occurrence_transposed,
    ref_words,
)

POLICIES = ("seq_flex", "seq_overflow", "gogeta_df", "gogeta_map", "ideal")
_GOGETA = ("gogeta_df", "gogeta_map")
_FREE_READ_PATTERNS = ("pipelineable", "pipeline_with_hold")


class MissingAnnotationError(RuntimeError):
    """A reuse-aware policy was requested on an unclassified/unordered DAG."""


@dataclass
class MachineConfig:
    clusters: int = 16
    pes_per_cluster: int = 1024
    sram_bytes: int = 4 * 1024 * 1024
    rf_bytes_per_pe: int = 512
    word_bytes: int = 4

    @property
    def sram_words(self) -> int:
        return self.sram_bytes // self.word_bytes


@dataclass
class TrafficReport:
    policy: str
    dram_read_words: int
    dram_write_words: int
    noc_intercluster_words: int
    sram_peak_words: int
    word_bytes: int
    per_node: list[dict] = field(default_factory=list)

    @property
    def dram_words(self) -> int:
        return self.dram_read_words + self.dram_write_words

    @property
    def dram_bytes(self) -> int:
        return self.dram_words * self.word_bytes

    @property
    def dram_mb(self) -> float:
        return self.dram_bytes / (1024.0 * 1024.0)


# ---------------------------------------------------------------------------
# SRAM residency
# ---------------------------------------------------------------------------

_DEAD = float("inf")


class SramState:
    """FIFO-filled scratchpad tracking a contiguous head prefix per tensor.

    A tensor's resident words are always its leading words; spills and
    evictions take the tail first.  Eviction (when enabled) picks the
    resident tensor with the farthest next use, breaking ties toward larger
    then older tensors; words of a tensor with no future use are dropped for
    free, dirty words with a future use cost a DRAM write.
    """

    def __init__(self, capacity_words: int):
        self.capacity = capacity_words
        self.entries: dict[str, dict] = {}
        self.peak = 0
        self._age = 0

    @property
    def used(self) -> int:
        return sum(e["words"] for e in self.entries.values())

    @property
    def free_words(self) -> int:
        return self.capacity - self.used

    def resident(self, name: str) -> int:
        e = self.entries.get(name)
        return e["words"] if e else 0

    def free(self, name: str) -> None:
        self.entries.pop(name, None)

    def insert(self, name: str, words: int, *, dirty: bool, evict: bool,
               next_use) -> int:
        """Place a tensor at the FIFO head; returns dirty words written to
        DRAM (spilled tail of the incoming tensor plus any evicted dirty
        words with a remaining use)."""
        if name in self.entries:
            raise ValueError(f"{name!r} already resident")
        self._age += 1
        age = self._age
        written = 0
        resident_target = words
        if not evict:
            keep = min(self.free_words, words)
            spill = words - keep
            if dirty:
                written += spill
            resident_target = keep
        else:
            incoming_dist = next_use(name)
            incoming_dist = _DEAD if incoming_dist is None else incoming_dist
            while self.free_words < resident_target:
                victims = []
                for vname, e in self.entries.items():
                    d = next_use(vname)
                    d = _DEAD if d is None else d
                    victims.append(((d, e["words"], -e["age"]), vname, d))
                if not victims:
                    spill = resident_target - self.free_words
                    if dirty:
                        written += spill
                    resident_target -= spill
                    break
                key, vname, vdist = max(victims)
                if (incoming_dist, words, -age) >= key:
                    spill = resident_target - self.free_words
                    if dirty:
                        written += spill
                    resident_target -= spill
                    break
                need = resident_target - self.free_words
                e = self.entries[vname]
                take = min(e["words"], need)
                e["words"] -= take
                if e["dirty"] and vdist is not _DEAD:
                    written += take
                if e["words"] == 0:
                    del self.entries[vname]
        if resident_target > 0:
            self.entries[name] = {"words": resident_target, "dirty": dirty, "age": age}
        if self.used > self.peak:
            self.peak = self.used
        return written


def sram_step(state: SramState, event: tuple, distances: dict):
    """Single produce/consume transition.

    `event` is ("produce", tensor, words) or ("consume", tensor, words);
    `distances` maps tensor names to their next-use distance (absent or None
    means no future use).  Returns (state, dram_write_words, dram_read_words).
    """
    kind, name, words = event
    if kind == "produce":
        written = state.insert(name, words, dirty=True, evict=True,
                               next_use=lambda t: distances.get(t))
        return state, written, 0
    if kind == "consume":
        hit = min(state.resident(name), words)
        return state, 0, words - hit
    raise ValueError(f"unknown event kind {kind!r}")


# ---------------------------------------------------------------------------
# Policy walk
# ---------------------------------------------------------------------------


def _check_annotations(dag: TensorDag, assignment) -> None:
    for e in dag.edges:
        if e.pattern is None:
            raise MissingAnnotationError(f"edge {e.key} lacks a reuse pattern")
    if assignment is None:
        for n in dag.nodes:
            if n.is_mac_like() and n.loop_order is None:
                raise MissingAnnotationError(f"node {n.id} lacks a loop order")


def _pipelined_free(dag: TensorDag, edge, config: MachineConfig,
                    pos_of: dict[int, int]) -> bool:
    """A pipelineable/hold edge moves data stage-to-stage for free when the
    in-flight footprint is feasible: adjacent stages stream one dominant-rank
    slice at a time, while a consumer further downstream must hold the whole
    tensor, which the register files can only absorb up to their total
    capacity.  Anything larger degrades to a stored copy."""
    if edge.pattern not in _FREE_READ_PATTERNS:
        return False
    if pos_of[edge.dest] - pos_of[edge.src] == 1:
        return True
    rf_total = config.rf_bytes_per_pe * config.pes_per_cluster * config.clusters
    return dag.tensor_words(edge.tensor.name) * config.word_bytes <= rf_total


def _materializes(dag: TensorDag, nid: int, config: MachineConfig,
                  pos_of: dict[int, int]) -> bool:
    node = dag.node(nid)
    if node.output.name in dag.outputs:
        return True
    edges = dag.out_edges(nid)
    if not edges:
        return False
    return any(not _pipelined_free(dag, e, config, pos_of) for e in edges)


def _ideal_report(dag: TensorDag, config: MachineConfig, values_only: bool) -> TrafficReport:
    reads = 0
    footprint = 0
    for name, (nid, ref) in sorted(dag.app_inputs().items()):
        w = compulsory_words(dag.node(nid), ref, values_only)
        reads += w
        footprint += w
    writes = sum(dag.tensor_words(name) for name in dag.outputs)
    for n in dag.nodes:
        footprint += ref_words(n, n.output)
    return TrafficReport(
        policy="ideal",
        dram_read_words=reads,
        dram_write_words=writes,
        noc_intercluster_words=0,
        sram_peak_words=footprint,
        word_bytes=config.word_bytes,
    )


def simulate(dag: TensorDag, assignment, config: MachineConfig, policy: str,
             values_only: bool = False) -> TrafficReport:
    """Walk the schedule under one policy and account every word moved."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if policy == "ideal":
        return _ideal_report(dag, config, values_only)
    gogeta = policy in _GOGETA
    if gogeta:
        _check_annotations(dag, assignment)

    pos_of = {nid: i for i, nid in enumerate(dag.schedule)}
    flush_pos = len(dag.schedule)
    use_positions: dict[str, list[int]] = {}
    for nid in dag.schedule:
        p = pos_of[nid]
        for ref in dag.node(nid).inputs:
            use_positions.setdefault(ref.name, []).append(p)
    use_ptr = {name: 0 for name in use_positions}
    outputs = set(dag.outputs)

    def next_use(name):
        uses = use_positions.get(name)
        if uses is not None:
            ptr = use_ptr[name]
            if ptr < len(uses):
                return uses[ptr]
        if name in outputs:
            return flush_pos
        return None

    sram = SramState(config.sram_words if policy != "seq_flex" else 0)
    reads = writes = 0
    per_node: list[dict] = []
    touched_inputs: set[str] = set()
    multicast_served: set[str] = set()

    for p, nid in enumerate(dag.schedule):
        node = dag.node(nid)
        n_reads = n_writes = 0

        for idx, ref in enumerate(node.inputs):
            w = compulsory_words(node, ref, values_only)
            producer = dag.producer_of(ref.name)
            if policy == "seq_flex":
                n_reads += w
                continue
            if gogeta and producer is not None:
                edge = dag.edge(producer, nid, ref.name)
                if _pipelined_free(dag, edge, config, pos_of):
                    continue
            if not gogeta and occurrence_transposed(node, idx):
                # Resident copy is laid out for the plain traversal only.
                n_reads += w
                continue
            if producer is None and ref.name not in touched_inputs:
                touched_inputs.add(ref.name)
                n_reads += w
                # Caching a clean input can still displace dirty data.
                n_writes += sram.insert(ref.name, w, dirty=False, evict=gogeta,
                                        next_use=next_use)
                continue
            miss = w - min(sram.resident(ref.name), w)
            if gogeta and producer is not None:
                src = dag.node(producer)
                edge = dag.edge(producer, nid, ref.name)
                if src.parallel_multicast and not edge.is_transitive:
                    if ref.name in multicast_served:
                        miss = 0
                    else:
                        multicast_served.add(ref.name)
            n_reads += miss

        # This node's occurrences are now consumed.
        for ref in node.inputs:
            uses = use_positions[ref.name]
            ptr = use_ptr[ref.name]
            while ptr < len(uses) and uses[ptr] <= p:
                ptr += 1
            use_ptr[ref.name] = ptr

        out_name = node.output.name
        out_words = ref_words(node, node.output)
        if policy == "seq_flex":
            n_writes += out_words
        elif policy == "seq_overflow":
            n_writes += sram.insert(out_name, out_words, dirty=True,
                                    evict=False, next_use=next_use)
        else:
            if _materializes(dag, nid, config, pos_of):
                n_writes += sram.insert(out_name, out_words, dirty=True,
                                        evict=True, next_use=next_use)

        if policy != "seq_flex":
            for ref in node.inputs:
                if next_use(ref.name) is None and ref.name not in outputs:
                    sram.free(ref.name)
            if next_use(out_name) is None and out_name not in outputs:
                sram.free(out_name)

        reads += n_reads
        writes += n_writes
        per_node.append({"node": nid, "name": node.name,
                         "dram_read_words": n_reads, "dram_write_words": n_writes})

    if policy != "seq_flex":
        for name in dag.outputs:
            res = sram.resident(name)
            writes += res
            sram.free(name)
            per_node.append({"node": None, "name": f"flush:{name}",
                             "dram_read_words": 0, "dram_write_words": res})

    noc = noc_traversals(dag, assignment, config, policy) if gogeta else 0
    return TrafficReport(
        policy=policy,
        dram_read_words=reads,
        dram_write_words=writes,
        noc_intercluster_words=noc,
        sram_peak_words=sram.peak,
        word_bytes=config.word_bytes,
        per_node=per_node,
    )


# ---------------------------------------------------------------------------
# Inter-cluster NoC
# ---------------------------------------------------------------------------


def _small_ref(node, ref) -> bool:
    return all(node.rank(r).size < SMALL_RANK_LIMIT for r in ref.ranks)


def noc_traversals(dag: TensorDag, assignment, config: MachineConfig,
                   policy: str, edges=None) -> int:
    """Inter-cluster word-link traversals of the pipelined pairs.

    gogeta_df keeps whole tensors local to a cluster group, so every
    pipelineable/hold edge moves its full tensor across the cluster boundary
    once.  gogeta_map slices the dominant rank across all clusters and only
    the small non-sliced tensors move: each is broadcast (operands) or
    reduced (outputs) over clusters-1 links.  Pass `edges` to restrict the
    accounting to one pipelined pair.
    """
    if policy not in _GOGETA:
        raise ValueError("NoC accounting applies to the reuse-aware policies")
    pipe = [e for e in (edges if edges is not None else dag.edges)
            if e.pattern in _FREE_READ_PATTERNS]
    if policy == "gogeta_df":
        return sum(dag.tensor_words(e.tensor.name) for e in pipe)

    links = config.clusters - 1
    if links <= 0:
        return 0
    scope = sorted({nid for e in pipe for nid in (e.src, e.dest)})
    total = 0
    for nid in scope:
        node = dag.node(nid)
        dom = node.dominance
        if dom is None or dom.kind not in ("U", "C"):
            continue
        for ref in node.inputs:
            if dom.dominant_rank not in ref.ranks and _small_ref(node, ref):
                total += ref_words(node, ref) * links
        out = node.output
        if dom.dominant_rank not in out.ranks and _small_ref(node, out):
            total += ref_words(node, out) * links
    return total


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def prepare_dag(dag: TensorDag, epsilon_schedule=None):
    """Classify reuse patterns and assign loop orders in place."""
    from .looporder import assign
    from .reuse import classify

    classify(dag)
    return assign(dag, epsilon_schedule)


def sweep_point(name: str, n: int | None, sram_mb_values, policies, iters: int,
                config: MachineConfig | None = None,
                values_only: bool = False) -> list[dict]:
    """One (dataset, N) sweep point: rows over SRAM sizes and policies."""
    from .workloads import CATALOG, build_cg_dag, build_gcn_dag

    base = config or MachineConfig()
    shape = CATALOG[name]
    if shape.workload == "cg":
        if n is None:
            raise ValueError("CG sweep point needs an N value")
        sweeps = [(n, build_cg_dag(shape.M, n, shape.nnz, iters))]
    else:
        sweeps = [(shape.N, build_gcn_dag(shape.M, shape.nnz, shape.N, shape.O))]
    rows: list[dict] = []
    for n, dag in sweeps:
        assignment = prepare_dag(dag)
        for sram_mb in sram_mb_values:
                cfg = MachineConfig(
                    clusters=base.clusters,
                    pes_per_cluster=base.pes_per_cluster,
                    sram_bytes=int(sram_mb * 1024 * 1024),
                    rf_bytes_per_pe=base.rf_bytes_per_pe,
                    word_bytes=base.word_bytes,
                )
                for policy in policies:
                    rep = simulate(dag, assignment, cfg, policy, values_only)
                    rows.append({
                        "dataset": name,
                        "N": n,
                        "sram_mb": sram_mb,
                        "policy": policy,
                        "dram_mb": rep.dram_mb,
                        "noc_kb": rep.noc_intercluster_words * base.word_bytes / 1024.0,
                        "sram_peak_kb": rep.sram_peak_words * base.word_bytes / 1024.0,
                        "dram_words": rep.dram_words,
                        "dram_read_words": rep.dram_read_words,
                        "dram_write_words": rep.dram_write_words,
                        "per_node": rep.per_node,
                    })
    return rows


def sweep_rows(datasets, n_values, sram_mb_values, policies, iters: int,
               config: MachineConfig | None = None,
               values_only: bool = False, jobs: int = 1) -> list[dict]:
    """Traffic rows over (dataset x N x SRAM x policy).

    GCN datasets carry their own feature widths, so the N sweep does not
    apply to them.  Sweep points run on a process pool when jobs > 1;
    results always merge in deterministic sweep order.
    """
    from .workloads import CATALOG

    points = []
    for name in datasets:
        if CATALOG[name].workload == "cg":
            points.extend((name, n) for n in n_values)
        else:
            points.append((name, None))
    args = [(name, n, tuple(sram_mb_values), tuple(policies), iters, config,
             values_only) for name, n in points]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point_star, args))
    else:
        results = [_sweep_point_star(a) for a in args]
    rows: list[dict] = []
    for chunk in results:
        rows.extend(chunk)
    return rows


def _sweep_point_star(args):
    return sweep_point(*args)


def reduction_factors(rows: list[dict], against: str = "seq_flex",
                      policy: str = "gogeta_map") -> dict[tuple, float]:
    """DRAM reduction factor of `policy` relative to `against`, per cell."""
    cells: dict[tuple, dict[str, float]] = {}
    for row in rows:
        key = (row["dataset"], row["N"], row["sram_mb"])
        cells.setdefault(key, {})[row["policy"]] = row["dram_words"]
    factors = {}
    for key, by_policy in sorted(cells.items()):
        if against in by_policy and policy in by_policy and by_policy[policy] > 0:
            factors[key] = by_policy[against] / by_policy[policy]
    return factors


def geomean(values) -> float:
    import math

    vals = list(values)
    if not vals:
        return 0.0
    return math.exp(sum(math.log(v) for v in vals) / len(vals))
