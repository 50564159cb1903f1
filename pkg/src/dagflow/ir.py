"""Attributed DAG of tensor operations.

A workload is a directed acyclic graph whose nodes are individual tensor
operations (dense/sparse multiply-accumulate, element-wise add, small matrix
inverse) and whose edges are producer -> consumer tensor dependences.  This
module owns the data model plus the structural analyses every later stage
relies on: topological schedule, critical path, transitive-edge marking,
rank-dominance classification and tensor reuse distances.

Rank names are scoped to their node.  An edge carries a `rank_map` that
translates the producer's rank names into the consumer's, so transposed and
re-labelled reads are explicit in the graph rather than implied by naming
conventions.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Iterable, Literal

OpKind = Literal["tensor_mac", "tensor_add", "small_inverse"]
RankKind = Literal["uncontracted", "contracted"]
DominanceKind = Literal["U", "C", "bal", "small"]

# Dominance thresholds: a rank dominates when it is large in absolute terms
# and more skewed than 100:1 against every other candidate rank.
DOMINANT_MIN_SIZE = 1000
DOMINANT_SKEW = 100
SMALL_RANK_LIMIT = 50


class CycleError(ValueError):
    """The edge set contains a directed cycle."""


class RankMismatchError(ValueError):
    """An edge's rank_map does not bijectively cover its tensor's ranks."""


@dataclass
class Rank:
    name: str
    size: int
    kind: RankKind
    compressed: bool = False


@dataclass
class TensorRef:
    """A tensor as seen from one node, with that node's rank names."""

    name: str
    ranks: list[str]
    sparse: bool = False
    nnz: int | None = None


@dataclass
class DominanceClass:
    kind: DominanceKind
    dominant_rank: str | None = None


@dataclass
class EinsumNode:
    id: int
    op: OpKind
    inputs: list[TensorRef]
    output: TensorRef
    ranks: list[Rank]
    name: str = ""
    dominance: DominanceClass | None = None
    numcast: int = 0
    parallel_multicast: bool = False
    loop_order: list[str] | None = None

    def rank(self, name: str) -> Rank:
        for r in self.ranks:
            if r.name == name:
                return r
        raise KeyError(f"node {self.id} has no rank {name!r}")

    def rank_names(self) -> list[str]:
        return [r.name for r in self.ranks]

    def contracted_names(self) -> set[str]:
        return {r.name for r in self.ranks if r.kind == "contracted"}

    def is_mac_like(self) -> bool:
        # Adds/subtracts ride the MAC datapath; only small inverses differ.
        return self.op in ("tensor_mac", "tensor_add")


@dataclass
class TensorEdge:
    src: int
    dest: int
    tensor: TensorRef
    rank_map: dict[str, str]
    is_transitive: bool = False
    pattern: str | None = None

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.src, self.dest, self.tensor.name)

    def consumer_ranks(self) -> list[str]:
        """The tensor's rank names as the consumer sees them."""
        return [self.rank_map[r] for r in self.tensor.ranks]


@dataclass
class TensorDag:
    nodes: list[EinsumNode]
    edges: list[TensorEdge]
    schedule: list[int] = field(default_factory=list)
    critical_path: list[int] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)

    def node(self, nid: int) -> EinsumNode:
        return self._by_id[nid]

    def node_by_name(self, name: str) -> EinsumNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def out_edges(self, nid: int) -> list[TensorEdge]:
        return self._out.get(nid, [])

    def in_edges(self, nid: int) -> list[TensorEdge]:
        return self._in.get(nid, [])

    def edge(self, src: int, dest: int, tensor: str) -> TensorEdge:
        return self._edge_index[(src, dest, tensor)]

    def producer_of(self, tensor: str) -> int | None:
        return self._producer.get(tensor)

    def app_inputs(self) -> dict[str, tuple[int, TensorRef]]:
        """Tensors read by some node but produced by none.

        Maps tensor name to the first (node id, ref) occurrence in schedule
        order, which fixes the shape used for sizing.
        """
        found: dict[str, tuple[int, TensorRef]] = {}
        for nid in self.schedule:
            for ref in self.node(nid).inputs:
                if ref.name not in self._producer and ref.name not in found:
                    found[ref.name] = (nid, ref)
        return found

    def tensor_words(self, name: str) -> int:
        """Dense word count of a tensor (element count)."""
        prod = self._producer.get(name)
        if prod is not None:
            node = self.node(prod)
            return ref_words(node, node.output)
        nid, ref = self.app_inputs()[name]
        return ref_words(self.node(nid), ref)

    def reindex(self) -> None:
        self._by_id = {n.id: n for n in self.nodes}
        self._out: dict[int, list[TensorEdge]] = {}
        self._in: dict[int, list[TensorEdge]] = {}
        for e in sorted(self.edges, key=lambda e: e.key):
            self._out.setdefault(e.src, []).append(e)
            self._in.setdefault(e.dest, []).append(e)
        self._edge_index = {e.key: e for e in self.edges}
        self._producer = {n.output.name: n.id for n in self.nodes}


def ref_words(node: EinsumNode, ref: TensorRef) -> int:
    """Element count of a tensor reference, dense layout."""
    total = 1
    for rname in ref.ranks:
        total *= node.rank(rname).size
    return total


def compulsory_words(node: EinsumNode, ref: TensorRef, values_only: bool = False) -> int:
    """Minimum words to move a tensor once.

    Dense tensors cost their element count.  Sparse operands use compressed
    row storage: values + column ids + one row entry per row of the leading
    rank (2*nnz + rows), or just nnz when index traffic is excluded.
    """
    if ref.sparse:
        if ref.nnz is None:
            raise ValueError(f"sparse tensor {ref.name!r} lacks nnz")
        if values_only:
            return ref.nnz
        rows = node.rank(ref.ranks[0]).size
        return 2 * ref.nnz + rows
    return ref_words(node, ref)


def occurrence_transposed(node: EinsumNode, index: int) -> bool:
    """Detect a transposed (gram-style) read of an input occurrence.

    The left operand of a multiply whose leading rank is contracted is being
    read against its storage order (the A^T * B pattern).  Sparse operands
    are excluded: compressed storage has no dense row-major order to violate.
    """
    if index != 0:
        return False
    ref = node.inputs[0]
    if ref.sparse or len(ref.ranks) < 2:
        return False
    return node.rank(ref.ranks[0]).kind == "contracted"


def compute_dominance(node: EinsumNode) -> DominanceClass:
    """Classify a node by which rank, if any, dominates its shape.

    A rank dominates when it exceeds DOMINANT_MIN_SIZE and is more than
    DOMINANT_SKEW times larger than every other non-compressed rank.
    Compressed ranks are excluded from candidacy (their stored footprint is
    the nonzero count, not the rank size).  With no dominant rank the node is
    `small` if any rank is under SMALL_RANK_LIMIT, else `bal`.
    """
    candidates = [r for r in node.ranks if not r.compressed]
    winners = []
    for r in candidates:
        if r.size <= DOMINANT_MIN_SIZE:
            continue
        if all(r.size > DOMINANT_SKEW * q.size for q in candidates if q.name != r.name):
            winners.append(r)
    if winners:
        # Mutually-exclusive by the skew test except degenerate single-rank
        # nodes; a contracted winner blocks pipelining, so it takes priority.
        contracted = [r for r in winners if r.kind == "contracted"]
        pick = contracted[0] if contracted else winners[0]
        kind: DominanceKind = "C" if pick.kind == "contracted" else "U"
        return DominanceClass(kind, pick.name)
    if any(r.size < SMALL_RANK_LIMIT for r in node.ranks):
        return DominanceClass("small")
    return DominanceClass("bal")


def _validate(nodes: list[EinsumNode], edges: list[TensorEdge]) -> None:
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node ids")
    by_id = {n.id: n for n in nodes}
    for n in nodes:
        names = n.rank_names()
        if len(set(names)) != len(names):
            raise ValueError(f"node {n.id}: duplicate rank names")
        for ref in n.inputs + [n.output]:
            if not ref.ranks or len(set(ref.ranks)) != len(ref.ranks):
                raise RankMismatchError(f"node {n.id}: bad rank list on {ref.name!r}")
            for rname in ref.ranks:
                n.rank(rname)
            if ref.nnz is not None and ref.nnz > ref_words(n, ref):
                raise ValueError(f"node {n.id}: nnz exceeds dense size of {ref.name!r}")
        for rname in n.output.ranks:
            if n.rank(rname).kind == "contracted":
                raise RankMismatchError(
                    f"node {n.id}: contracted rank {rname!r} in output")
    for e in edges:
        if e.src not in by_id or e.dest not in by_id:
            raise ValueError(f"edge {e.key}: unknown endpoint")
        src = by_id[e.src]
        if src.output.name != e.tensor.name:
            raise RankMismatchError(
                f"edge {e.key}: source does not produce {e.tensor.name!r}")
        if set(e.rank_map.keys()) != set(e.tensor.ranks):
            raise RankMismatchError(f"edge {e.key}: rank_map keys do not cover tensor ranks")
        values = list(e.rank_map.values())
        if len(set(values)) != len(values):
            raise RankMismatchError(f"edge {e.key}: rank_map is not a bijection")
        dest_names = set(by_id[e.dest].rank_names())
        if not set(values) <= dest_names:
            raise RankMismatchError(f"edge {e.key}: rank_map targets unknown consumer ranks")


def _topo_schedule(nodes: list[EinsumNode], edges: list[TensorEdge]) -> list[int]:
    indeg = {n.id: 0 for n in nodes}
    succ: dict[int, list[int]] = {n.id: [] for n in nodes}
    for e in edges:
        indeg[e.dest] += 1
        succ[e.src].append(e.dest)
    ready = [nid for nid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for s in succ[nid]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(ready, s)
    if len(order) != len(nodes):
        raise CycleError("graph contains a cycle")
    return order


def _critical_path(dag: TensorDag) -> list[int]:
    """Longest path by edge count; ties broken lexicographically by node id."""
    length: dict[int, int] = {}
    for nid in reversed(dag.schedule):
        succs = [e.dest for e in dag.out_edges(nid)]
        length[nid] = 1 + max((length[s] for s in succs), default=-1)
    best = max(length.values())
    cur = min(nid for nid, l in length.items() if l == best)
    path = [cur]
    while length[cur] > 0:
        nxt = min(e.dest for e in dag.out_edges(cur) if length[e.dest] == length[cur] - 1)
        path.append(nxt)
        cur = nxt
    return path


def mark_transitive_edges(dag: TensorDag) -> TensorDag:
    """Flag edges that shortcut the critical path.

    An edge is transitive iff both endpoints lie on the critical path and the
    edge itself is not one of the path's consecutive hops.
    """
    on_path = set(dag.critical_path)
    hops = set(zip(dag.critical_path, dag.critical_path[1:]))
    for e in dag.edges:
        e.is_transitive = (
            e.src in on_path and e.dest in on_path and (e.src, e.dest) not in hops
        )
    return dag


def build_dag(
    nodes: list[EinsumNode],
    edges: list[TensorEdge],
    outputs: list[str] | None = None,
) -> TensorDag:
    """Validate and fully attribute a tensor DAG.

    Populates the deterministic schedule (topological, ties by ascending id),
    the critical path, per-node dominance and transitive-edge flags.  When
    `outputs` is omitted, every sink tensor (produced but never consumed)
    is treated as an application output.
    """
    _validate(nodes, edges)
    dag = TensorDag(nodes=nodes, edges=edges)
    dag.schedule = _topo_schedule(nodes, edges)
    dag.reindex()
    dag.critical_path = _critical_path(dag)
    for n in nodes:
        n.dominance = compute_dominance(n)
    mark_transitive_edges(dag)
    if outputs is None:
        consumed = {e.tensor.name for e in edges}
        outputs = [n.output.name for nid in dag.schedule
                   for n in [dag.node(nid)] if n.output.name not in consumed]
    dag.outputs = list(outputs)
    return dag


def reuse_distances(dag: TensorDag) -> dict[tuple[int, int, str], int]:
    """Intervening node count between an edge's producer and consumer."""
    pos = {nid: i for i, nid in enumerate(dag.schedule)}
    return {e.key: pos[e.dest] - pos[e.src] - 1 for e in dag.edges}


# ---------------------------------------------------------------------------
# JSON round-trip.  Field names are the wire contract; extra attribute fields
# (name, dominance, numcast, parallel_multicast, loop_order, is_transitive,
# pattern) are included when present so annotated dumps stay one format.
# ---------------------------------------------------------------------------


def _ref_to_json(ref: TensorRef) -> dict:
    out: dict = {"name": ref.name, "ranks": list(ref.ranks), "sparse": ref.sparse}
    if ref.nnz is not None:
        out["nnz"] = ref.nnz
    return out


def _ref_from_json(obj: dict) -> TensorRef:
    return TensorRef(
        name=obj["name"],
        ranks=list(obj["ranks"]),
        sparse=bool(obj.get("sparse", False)),
        nnz=obj.get("nnz"),
    )


def dag_to_dict(dag: TensorDag) -> dict:
    nodes = []
    for n in sorted(dag.nodes, key=lambda n: n.id):
        obj: dict = {
            "id": n.id,
            "op": n.op,
            "inputs": [_ref_to_json(r) for r in n.inputs],
            "output": _ref_to_json(n.output),
            "ranks": [
                {"name": r.name, "size": r.size, "kind": r.kind, "compressed": r.compressed}
                for r in n.ranks
            ],
        }
        if n.name:
            obj["name"] = n.name
        if n.dominance is not None:
            obj["dominance"] = {"kind": n.dominance.kind,
                                "dominant_rank": n.dominance.dominant_rank}
            obj["numcast"] = n.numcast
            obj["parallel_multicast"] = n.parallel_multicast
        if n.loop_order is not None:
            obj["loop_order"] = list(n.loop_order)
        nodes.append(obj)
    edges = []
    for e in sorted(dag.edges, key=lambda e: e.key):
        obj = {
            "src": e.src,
            "dest": e.dest,
            "tensor": e.tensor.name,
            "rank_map": dict(sorted(e.rank_map.items())),
            "is_transitive": e.is_transitive,
        }
        if e.pattern is not None:
            obj["pattern"] = e.pattern
        edges.append(obj)
    return {
        "nodes": nodes,
        "edges": edges,
        "schedule": list(dag.schedule),
        "critical_path": list(dag.critical_path),
        "outputs": list(dag.outputs),
    }


def dag_to_json(dag: TensorDag) -> str:
    return json.dumps(dag_to_dict(dag), indent=2, sort_keys=True)


def dag_from_dict(obj: dict) -> TensorDag:
    nodes = []
    for n in obj["nodes"]:
        node = EinsumNode(
            id=int(n["id"]),
            op=n["op"],
            inputs=[_ref_from_json(r) for r in n["inputs"]],
            output=_ref_from_json(n["output"]),
            ranks=[Rank(r["name"], int(r["size"]), r["kind"], bool(r.get("compressed", False)))
                   for r in n["ranks"]],
            name=n.get("name", ""),
        )
        if "loop_order" in n:
            node.loop_order = list(n["loop_order"])
        nodes.append(node)
    by_id = {n.id: n for n in nodes}
    edges = []
    for e in obj["edges"]:
        src = by_id[int(e["src"])]
        edges.append(TensorEdge(
            src=int(e["src"]),
            dest=int(e["dest"]),
            tensor=src.output,
            rank_map=dict(e["rank_map"]),
        ))
    dag = build_dag(nodes, edges, outputs=obj.get("outputs"))
    for e_obj, e in zip(sorted(obj["edges"], key=lambda d: (d["src"], d["dest"], d["tensor"])),
                        sorted(dag.edges, key=lambda e: e.key)):
        if "pattern" in e_obj:
            e.pattern = e_obj["pattern"]
    return dag


def dag_from_json(text: str) -> TensorDag:
    return dag_from_dict(json.loads(text))
