"""Per-node loop-order assignment.

Picks one rank permutation (outermost first) for every multiply/add node so
that every pipelineable or hold edge is pipeline-compatible, all consumers of
a multicast tensor agree on its traversal order, and the number of swizzled
tensors on writeback/sequential edges stays within a budget.  The budget
starts at the first value of an epsilon schedule and advances when the search
space is exhausted at the current value.

The search is deterministic: nodes are visited in schedule order and, per
node, candidate permutations are tried in positional-lexicographic order of
the node's declared rank list, with permutations that put the dominant rank
outermost tried first (the dominant rank is the one tiling later slices
across clusters, so keeping it outermost avoids reordering).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

from .ir import TensorDag, TensorEdge


class NoAssignmentError(RuntimeError):
    """All epsilon values exhausted without a satisfying assignment."""


class InfeasibleEdgeError(RuntimeError):
    """A pipelineable edge admits no compatible loop-order pair at all."""

    def __init__(self, edge_key):
        self.edge_key = edge_key
        super().__init__(f"edge {edge_key} can never be pipeline compatible")


@dataclass
class LoopOrderAssignment:
    orders: dict[int, list[str]]
    swizzle_penalty: int
    attempts: int

    def to_dict(self) -> dict:
        return {
            "orders": {str(nid): list(order) for nid, order in sorted(self.orders.items())},
            "swizzle_penalty": self.swizzle_penalty,
            "attempts": self.attempts,
        }


def _project(order, names) -> tuple:
    return tuple(r for r in order if r in names)


def is_swizzled(edge: TensorEdge, producer_order, consumer_order) -> bool:
    """True when the consumer traverses the edge tensor's ranks in a
    different relative order than the producer wrote them.

    Both orders are projected onto the tensor's ranks; the consumer's
    projection is translated back to producer rank names through the edge's
    rank_map before comparison, so transposed reads surface naturally.
    """
    prod_seq = _project(producer_order, set(edge.tensor.ranks))
    inverse = {v: k for k, v in edge.rank_map.items()}
    cons_seq = tuple(inverse[r] for r in _project(consumer_order, set(inverse)))
    return prod_seq != cons_seq


def pipeline_compatible(dag: TensorDag, edge: TensorEdge,
                        producer_order, consumer_order) -> bool:
    """Conditions for an edge to actually pipeline under a loop-order pair.

    (i) the producer's outermost rank is uncontracted (output slices appear
    early), (ii) the consumer's outermost rank is shared with the edge tensor
    (a slice is fully consumed before moving on), and (iii) the shared tensor
    is not swizzled across the edge.
    """
    src = dag.node(edge.src)
    if src.rank(producer_order[0]).kind == "contracted":
        return False
    if consumer_order[0] not in set(edge.consumer_ranks()):
        return False
    return not is_swizzled(edge, producer_order, consumer_order)


def _candidates(node) -> list[tuple[str, ...]]:
    names = node.rank_names()
    perms = list(permutations(names))
    dom = node.dominance.dominant_rank if node.dominance else None
    if dom is not None:
        perms.sort(key=lambda p: p[0] != dom)  # stable: keeps lex order within groups
    return perms


def assign(dag: TensorDag, epsilon_schedule: list[int] | None = None) -> LoopOrderAssignment:
    """Search for loop orders satisfying pipelining, multicast and swizzle
    constraints; returns the first assignment found at the smallest feasible
    epsilon.

    Raises InfeasibleEdgeError if some pipelineable/hold edge has no
    compatible order pair at all, NoAssignmentError when every epsilon in the
    schedule is exhausted.  Orders are also written onto the nodes'
    `loop_order` fields.
    """
    if epsilon_schedule is None:
        epsilon_schedule = list(range(len(dag.edges) + 1))

    mac_ids = [nid for nid in dag.schedule if dag.node(nid).is_mac_like()]
    slot = {nid: i for i, nid in enumerate(mac_ids)}
    cands = {nid: _candidates(dag.node(nid)) for nid in mac_ids}

    pipe_edges = [e for e in dag.edges
                  if e.pattern in ("pipelineable", "pipeline_with_hold")
                  and e.src in slot and e.dest in slot]
    count_edges = [e for e in dag.edges
                   if e.pattern in ("pipeline_with_writeback", "sequential")
                   and e.src in slot and e.dest in slot]
    # Multicast groups: consumers of a multicasting node's non-transitive
    # edges must traverse the shared tensor identically.  The producer itself
    # may be orderless (a small inverse); only the consumers are constrained.
    groups: list[list[TensorEdge]] = []
    for nid in dag.schedule:
        node = dag.node(nid)
        if node.parallel_multicast:
            members = [e for e in dag.out_edges(nid)
                       if not e.is_transitive and e.dest in slot]
            if len(members) > 1:
                groups.append(members)

    for e in pipe_edges:
        ok = any(
            pipeline_compatible(dag, e, po, co)
            for po in cands[e.src] for co in cands[e.dest]
        )
        if not ok:
            raise InfeasibleEdgeError(e.key)

    attempts = 0

    def violates(orders: dict[int, tuple[str, ...]], nid: int, eps: int) -> bool:
        for e in pipe_edges:
            if nid in (e.src, e.dest) and e.src in orders and e.dest in orders:
                if not pipeline_compatible(dag, e, orders[e.src], orders[e.dest]):
                    return True
        for members in groups:
            assigned = [e for e in members if e.dest in orders]
            if len(assigned) < 2:
                continue
            projections = set()
            for e in assigned:
                inverse = {v: k for k, v in e.rank_map.items()}
                proj = tuple(inverse[r] for r in orders[e.dest] if r in inverse)
                projections.add(proj)
            if len(projections) > 1:
                return True
        penalty = 0
        for e in count_edges:
            if e.src in orders and e.dest in orders:
                if is_swizzled(e, orders[e.src], orders[e.dest]):
                    penalty += 1
                    if penalty > eps:
                        return True
        return False

    def total_penalty(orders) -> int:
        return sum(
            1 for e in count_edges
            if is_swizzled(e, orders[e.src], orders[e.dest])
        )

    def search(i: int, orders: dict, eps: int):
        nonlocal attempts
        if i == len(mac_ids):
            return dict(orders)
        nid = mac_ids[i]
        for cand in cands[nid]:
            attempts += 1
            orders[nid] = cand
            if not violates(orders, nid, eps):
                found = search(i + 1, orders, eps)
                if found is not None:
                    return found
            del orders[nid]
        return None

    for eps in epsilon_schedule:
        found = search(0, {}, eps)
        if found is not None:
            result = LoopOrderAssignment(
                orders={nid: list(order) for nid, order in found.items()},
                swizzle_penalty=total_penalty(found),
                attempts=attempts,
            )
            for nid, order in result.orders.items():
                dag.node(nid).loop_order = list(order)
            return result
    raise NoAssignmentError(
        f"no loop-order assignment within epsilon schedule {epsilon_schedule}")
