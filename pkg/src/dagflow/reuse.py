"""Edge reuse-pattern classification.

Walks every node's outgoing edges and assigns one of four patterns:

  sequential              op-by-op execution, no inter-operation benefit
  pipelineable            consumer can eat the producer's output slice by slice
  pipeline_with_writeback pipelined, but a future consumer forces a stored copy
  pipeline_with_hold      pipelined and held on-chip until the future consumer

Rules fire in a fixed order and later assignments overwrite earlier ones for
the same edge; edges whose pattern changed across rules are reported in the
returned diagnostics.  Nodes with more than one non-transitive out-edge
multicast their output to parallel consumers, which is a node flag rather
than an edge pattern.
"""

from __future__ import annotations

from .ir import TensorDag, TensorEdge

PATTERNS = (
    "sequential",
    "pipelineable",
    "pipeline_with_writeback",
    "pipeline_with_hold",
)

PATTERN_COLORS = {
    "sequential": "black",
    "pipelineable": "blue",
    "pipeline_with_writeback": "firebrick",
    "pipeline_with_hold": "cyan",
}


class UnclassifiedError(RuntimeError):
    """An edge survived classification without a pattern (malformed DAG)."""


def classify(dag: TensorDag) -> TensorDag:
    """Assign reuse patterns to every edge and multicast flags to nodes.

    Requires dominance, the critical path and transitive flags (all populated
    by build_dag).  Returns the same DAG; rule-order diagnostics are attached
    as `dag.classify_diagnostics`.
    """
    pos = {nid: i for i, nid in enumerate(dag.critical_path)}
    diagnostics: list[dict] = []

    for nid in dag.schedule:
        node = dag.node(nid)
        node.numcast = 0
        node.parallel_multicast = False
        for edge in dag.out_edges(nid):
            fired: list[str] = []
            if not edge.is_transitive:
                node.numcast += 1
                if node.numcast > 1:
                    node.parallel_multicast = True

            dom = node.dominance
            contracted_src = dom is not None and dom.kind == "C"

            if not contracted_src and not edge.is_transitive:
                edge.pattern = "pipelineable"
                fired.append(edge.pattern)

            if contracted_src or node.op == "small_inverse":
                edge.pattern = "sequential"
                fired.append(edge.pattern)

            dest_dom = dag.node(edge.dest).dominance
            if dest_dom is not None and dest_dom.kind in ("U", "C"):
                if dest_dom.dominant_rank not in edge.consumer_ranks():
                    edge.pattern = "sequential"
                    fired.append(edge.pattern)

            if not contracted_src and edge.is_transitive:
                segment = dag.critical_path[pos[edge.src] + 1: pos[edge.dest]]
                if any(dag.node(p).dominance.kind == "C" for p in segment):
                    edge.pattern = "pipeline_with_writeback"
                else:
                    edge.pattern = "pipeline_with_hold"
                fired.append(edge.pattern)

            if len(set(fired)) > 1:
                diagnostics.append({"edge": edge.key, "rules": fired})

    for edge in dag.edges:
        if edge.pattern not in PATTERNS:
            raise UnclassifiedError(f"edge {edge.key} has no pattern")

    dag.classify_diagnostics = diagnostics
    return dag


def edge_table(dag: TensorDag) -> str:
    """Human-readable (edge, tensor, pattern) table."""
    rows = [("src", "dest", "tensor", "pattern", "transitive")]
    for e in sorted(dag.edges, key=lambda e: e.key):
        rows.append((str(e.src), str(e.dest), e.tensor.name,
                     e.pattern or "-", "yes" if e.is_transitive else "no"))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def to_dot(dag: TensorDag) -> str:
    """Graphviz text with the usual color convention.

    Pattern colors: blue pipelineable, firebrick writeback, cyan hold,
    black sequential.  Non-transitive edges out of a multicasting node are
    drawn green regardless of pattern.
    """
    lines = ["digraph dag {", "  rankdir=TB;"]
    for n in sorted(dag.nodes, key=lambda n: n.id):
        dom = n.dominance.kind if n.dominance else "?"
        label = f"{n.id}"
        if n.name:
            label += f" {n.name}"
        label += f"\\n{n.output.name} [{dom}]"
        shape = "ellipse" if n.op != "small_inverse" else "diamond"
        lines.append(f'  n{n.id} [label="{label}", shape={shape}];')
    for e in sorted(dag.edges, key=lambda e: e.key):
        src = dag.node(e.src)
        if src.parallel_multicast and not e.is_transitive:
            color = "green"
        else:
            color = PATTERN_COLORS.get(e.pattern or "", "gray")
        style = "dashed" if e.is_transitive else "solid"
        lines.append(
            f'  n{e.src} -> n{e.dest} [label="{e.tensor.name}", '
            f'color={color}, style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
