"""Reuse classification, loop ordering and traffic modeling for tensor DAGs."""

from .ir import (
    CycleError,
    DominanceClass,
    EinsumNode,
    Rank,
    RankMismatchError,
    TensorDag,
    TensorEdge,
    TensorRef,
    build_dag,
    compute_dominance,
    dag_from_json,
    dag_to_json,
    mark_transitive_edges,
    reuse_distances,
)
from .looporder import (
    InfeasibleEdgeError,
    LoopOrderAssignment,
    NoAssignmentError,
    assign,
    is_swizzled,
    pipeline_compatible,
)
from .reuse import UnclassifiedError, classify
from .traffic import (
    MachineConfig,
    MissingAnnotationError,
    SramState,
    TrafficReport,
    noc_traversals,
    simulate,
    sram_step,
)

__version__ = "0.1.0"
