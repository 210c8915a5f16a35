"""Mission-specific reasoning graph generation."""

from .builder import (
    EmptyLayer,
    Recorder,
    RepairContext,
    Violation,
    detect_errors,
    generate_edges,
    generate_graph,
    generate_initial_concepts,
    generate_next_layer,
    repair_or_prune,
    suggest_related,
)
from .clients import (
    FileConceptNet,
    HttpConceptNet,
    HttpLlmClient,
    MalformedResponse,
    ScriptedLlm,
    ServiceUnavailable,
    SyntheticLlm,
    parse_word_list,
)
from .graph import (
    GraphEdge,
    GraphNode,
    MissionSpec,
    ReasoningGraph,
    StructuralViolation,
    assemble_graph,
    normalize_label,
    validate_graph,
)

__all__ = [
    "EmptyLayer",
    "Recorder",
    "RepairContext",
    "Violation",
    "detect_errors",
    "generate_edges",
    "generate_graph",
    "generate_initial_concepts",
    "generate_next_layer",
    "repair_or_prune",
    "suggest_related",
    "FileConceptNet",
    "HttpConceptNet",
    "HttpLlmClient",
    "MalformedResponse",
    "ScriptedLlm",
    "ServiceUnavailable",
    "SyntheticLlm",
    "parse_word_list",
    "GraphEdge",
    "GraphNode",
    "MissionSpec",
    "ReasoningGraph",
    "StructuralViolation",
    "assemble_graph",
    "normalize_label",
    "validate_graph",
]
