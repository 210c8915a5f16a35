"""Reasoning-graph data model: layered DAG per mission, assembly, validation and JSON IO."""

from __future__ import annotations

import json
import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SENSOR = "sensor"
KEY_CONCEPT = "key_concept"
SUB_GRAPH = "sub_graph"
ENCODING = "encoding"
NODE_KINDS = (SENSOR, KEY_CONCEPT, SUB_GRAPH, ENCODING)

EDGE_PROVENANCE = ("sensor_fanout", "conceptnet", "llm_selected", "encoding_fanin")

_WS = re.compile(r"\s+")


class StructuralViolation(ValueError):
    """Raised when an assembled graph breaks a reasoning-graph invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def normalize_label(label: str) -> str:
    """Case-fold, trim and collapse internal whitespace."""
    return _WS.sub(" ", label.strip()).casefold()


@dataclass(frozen=True)
class MissionSpec:
    mission_id: str
    mission_text: str
    n_concepts: int = 20
    sub_depth: int = 1
    max_parents: int = 5
    max_repair_attempts: int = 3

    def __post_init__(self):
        if self.n_concepts < 1:
            raise ValueError("n_concepts must be >= 1")
        if self.sub_depth < 0:
            raise ValueError("sub_depth must be >= 0")
        if self.max_parents < 1:
            raise ValueError("max_parents must be >= 1")
        if self.max_repair_attempts < 1:
            raise ValueError("max_repair_attempts must be >= 1")


@dataclass(frozen=True)
class GraphNode:
    node_id: str
    label: str
    kind: str
    layer_index: int


@dataclass(frozen=True)
class GraphEdge:
    src: str
    dst: str
    provenance: str


@dataclass
class ReasoningGraph:
    mission: MissionSpec
    nodes: list[GraphNode]
    edges: list[GraphEdge]
    generation_trace: list[dict[str, Any]] = field(default_factory=list)

    # lookups

    def node(self, node_id: str) -> GraphNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def sensor(self) -> GraphNode:
        return next(n for n in self.nodes if n.kind == SENSOR)

    @property
    def encoding(self) -> GraphNode:
        return next(n for n in self.nodes if n.kind == ENCODING)

    @property
    def depth(self) -> int:
        """Index of the encoding layer, i.e. d_sub + 2."""
        return self.mission.sub_depth + 2

    def layer(self, index: int) -> list[GraphNode]:
        return [n for n in self.nodes if n.layer_index == index]

    def labels(self, kind: str | None = None) -> list[str]:
        return [n.label for n in self.nodes if kind is None or n.kind == kind]

    def out_degree(self, node_id: str) -> int:
        return sum(1 for e in self.edges if e.src == node_id)

    def in_degree(self, node_id: str) -> int:
        return sum(1 for e in self.edges if e.dst == node_id)

    # serialization

    def to_dict(self) -> dict[str, Any]:
        return {
            "mission_id": self.mission.mission_id,
            "mission_text": self.mission.mission_text,
            "n_concepts": self.mission.n_concepts,
            "max_parents": self.mission.max_parents,
            "max_repair_attempts": self.mission.max_repair_attempts,
            "d_sub": self.mission.sub_depth,
            "nodes": [
                {"id": n.node_id, "label": n.label, "kind": n.kind, "layer": n.layer_index}
                for n in self.nodes
            ],
            "edges": [{"src": e.src, "dst": e.dst, "provenance": e.provenance} for e in self.edges],
            "trace": self.generation_trace,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ReasoningGraph":
        mission = MissionSpec(
            mission_id=d["mission_id"],
            mission_text=d.get("mission_text", d["mission_id"]),
            n_concepts=d.get("n_concepts", 20),
            sub_depth=d["d_sub"],
            max_parents=d.get("max_parents", 5),
            max_repair_attempts=d.get("max_repair_attempts", 3),
        )
        nodes = [GraphNode(n["id"], n["label"], n["kind"], n["layer"]) for n in d["nodes"]]
        edges = [GraphEdge(e["src"], e["dst"], e["provenance"]) for e in d["edges"]]
        return cls(mission, nodes, edges, list(d.get("trace", [])))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ReasoningGraph":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def assemble_graph(
    layers: list[list[str]],
    edges: list[tuple[str, str, str]],
    mission: MissionSpec,
    trace: list[dict[str, Any]] | None = None,
) -> ReasoningGraph:
    """Build the completed graph from key-concept/sub-graph layers and sub-graph edges.

    ``layers[0]`` holds key concepts, ``layers[k]`` the k-th sub-graph layer.
    ``edges`` are ``(parent_label, child_label, provenance)`` between adjacent
    layers. The sensor fans out to every key concept; the encoding node
    collects every sub-graph node without an outgoing sub-graph edge (key
    concepts stand in when ``d_sub == 0``).
    """
    if len(layers) != mission.sub_depth + 1:
        raise StructuralViolation(
            [f"expected {mission.sub_depth + 1} content layers, got {len(layers)}"]
        )
    trace = list(trace or [])
    nodes = [GraphNode("snr", "", SENSOR, 0)]
    ids: dict[str, str] = {}
    for k, layer in enumerate(layers):
        kind = KEY_CONCEPT if k == 0 else SUB_GRAPH
        prefix = "cpt" if k == 0 else f"sub{k}"
        for j, label in enumerate(layer):
            nid = f"{prefix}_{j}"
            ids[label] = nid
            nodes.append(GraphNode(nid, label, kind, k + 1))
    depth = mission.sub_depth + 2
    nodes.append(GraphNode("ecd", "", ENCODING, depth))

    out: list[GraphEdge] = [GraphEdge("snr", ids[lab], "sensor_fanout") for lab in layers[0]]
    has_child: set[str] = set()
    for parent, child, prov in edges:
        if parent not in ids or child not in ids:
            raise StructuralViolation([f"edge {parent!r}->{child!r} references an unknown label"])
        out.append(GraphEdge(ids[parent], ids[child], prov))
        has_child.add(ids[parent])

    if mission.sub_depth == 0:
        trace.append({"event": "warning", "message": "d_sub=0: encoding node fed by key concepts"})
        leaf_pool = [n for n in nodes if n.kind == KEY_CONCEPT]
    else:
        leaf_pool = [n for n in nodes if n.kind == SUB_GRAPH]
    for n in leaf_pool:
        if n.node_id not in has_child:
            out.append(GraphEdge(n.node_id, "ecd", "encoding_fanin"))

    g = ReasoningGraph(mission, nodes, out, trace)
    problems = validate_graph(g)
    if problems:
        raise StructuralViolation(problems)
    return g


def _topological_order(g: ReasoningGraph) -> list[str] | None:
    indeg = {n.node_id: 0 for n in g.nodes}
    children = defaultdict(list)
    for e in g.edges:
        indeg[e.dst] += 1
        children[e.src].append(e.dst)
    queue = deque(nid for nid, d in indeg.items() if d == 0)
    order = []
    while queue:
        nid = queue.popleft()
        order.append(nid)
        for c in children[nid]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    return order if len(order) == len(indeg) else None


def validate_graph(g: ReasoningGraph) -> list[str]:
    """Return every invariant violation; an empty list means the graph is valid."""
    v: list[str] = []
    by_id = {}
    for n in g.nodes:
        if n.node_id in by_id:
            v.append(f"duplicate node id {n.node_id}")
        by_id[n.node_id] = n
        if n.kind not in NODE_KINDS:
            v.append(f"node {n.node_id}: unknown kind {n.kind}")
    depth = g.mission.sub_depth + 2

    sensors = [n for n in g.nodes if n.kind == SENSOR]
    encoders = [n for n in g.nodes if n.kind == ENCODING]
    if len(sensors) != 1:
        v.append(f"expected exactly one sensor node, found {len(sensors)}")
    if len(encoders) != 1:
        v.append(f"expected exactly one encoding node, found {len(encoders)}")

    for n in g.nodes:
        expected = {SENSOR: {0}, KEY_CONCEPT: {1}, ENCODING: {depth}}.get(
            n.kind, set(range(2, depth))
        )
        if n.layer_index not in expected:
            v.append(f"node {n.node_id}: kind {n.kind} inconsistent with layer {n.layer_index}")

    seen: dict[str, str] = {}
    for n in g.nodes:
        if n.kind in (SENSOR, ENCODING):
            continue
        key = normalize_label(n.label)
        if not key:
            v.append(f"node {n.node_id}: empty label")
        elif key in seen:
            v.append(f"uniqueness: label {key!r} on {seen[key]} and {n.node_id}")
        else:
            seen[key] = n.node_id

    parents = defaultdict(list)
    children = defaultdict(list)
    for e in g.edges:
        if e.src not in by_id or e.dst not in by_id:
            v.append(f"edge {e.src}->{e.dst}: unknown endpoint")
            continue
        s, d = by_id[e.src], by_id[e.dst]
        parents[e.dst].append(s)
        children[e.src].append(d)
        if e.provenance not in EDGE_PROVENANCE:
            v.append(f"edge {e.src}->{e.dst}: unknown provenance {e.provenance}")
        if s.layer_index >= d.layer_index:
            v.append(f"layer monotonicity: {e.src}(L{s.layer_index})->{e.dst}(L{d.layer_index})")
        if e.provenance == "sensor_fanout" and not (s.kind == SENSOR and d.kind == KEY_CONCEPT):
            v.append(f"edge {e.src}->{e.dst}: sensor_fanout must go sensor->key_concept")
        if e.provenance == "encoding_fanin" and d.kind != ENCODING:
            v.append(f"edge {e.src}->{e.dst}: encoding_fanin must end at the encoding node")
        if d.kind == ENCODING and e.provenance != "encoding_fanin":
            v.append(f"edge {e.src}->{e.dst}: only encoding_fanin edges may enter the encoding node")

    if _topological_order(g) is None:
        v.append("acyclicity: graph contains a cycle")

    for n in g.nodes:
        ps = parents[n.node_id]
        if n.kind == KEY_CONCEPT:
            if len(ps) != 1 or ps[0].kind != SENSOR:
                v.append(f"key concept {n.node_id}: in-degree must be exactly 1 from the sensor")
        elif n.kind == SUB_GRAPH:
            if not any(p.layer_index == n.layer_index - 1 for p in ps):
                v.append(f"sub-graph node {n.node_id}: no parent in the previous layer")
        if n.kind != SENSOR and not ps and not children[n.node_id]:
            v.append(f"isolated node {n.node_id}")

    if len(encoders) == 1:
        ecd = encoders[0]
        leaf_kind = SUB_GRAPH if g.mission.sub_depth > 0 else KEY_CONCEPT
        expected_leaves = {
            n.node_id
            for n in g.nodes
            if n.kind == leaf_kind
            and not any(c.kind == SUB_GRAPH for c in children[n.node_id])
        }
        actual = {p.node_id for p in parents[ecd.node_id]}
        if actual != expected_leaves:
            v.append(
                "encoding fan-in mismatch: missing "
                f"{sorted(expected_leaves - actual)}, unexpected {sorted(actual - expected_leaves)}"
            )
    return v
