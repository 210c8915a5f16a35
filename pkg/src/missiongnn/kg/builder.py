"""Mission-specific graph generation: LLM node/edge proposals, ConceptNet hints, error repair."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

from . import prompts
from .clients import MalformedResponse, parse_word_list
from .graph import MissionSpec, ReasoningGraph, assemble_graph, normalize_label

log = logging.getLogger(__name__)

DUPLICATE_NODE = "duplicate_node"
INVALID_PARENT = "invalid_parent"
ZERO_PARENTS = "zero_parents"


class EmptyLayer(RuntimeError):
    """Every node of a layer was pruned; the mission's graph cannot be completed."""


@dataclass(frozen=True)
class Violation:
    kind: str
    label: str
    detail: str = ""


class Recorder:
    """Routes every service call through one ordered trace."""

    def __init__(self, llm, cn=None, trace=None):
        self.llm = llm
        self.cn = cn
        self.trace: list[dict[str, Any]] = trace if trace is not None else []

    def chat(self, persona: str, messages: list[dict]) -> str:
        reply = self.llm.chat(messages)
        self.trace.append(
            {"call": "llm", "persona": persona, "prompt": messages[-1]["content"], "response": reply}
        )
        return reply

    def related(self, term: str) -> set[str]:
        out = self.cn.related(term)
        self.trace.append({"call": "conceptnet", "term": term, "related": sorted(out)})
        return out

    def event(self, **kw):
        self.trace.append(kw)


def _recorder(client) -> Recorder:
    return client if isinstance(client, Recorder) else Recorder(client)


def generate_initial_concepts(mission: MissionSpec, llm, messages=None) -> list[str]:
    """Ask for the key-concept words of a mission.

    ``messages`` (if given) receives the conversation so a repair step can
    continue it.
    """
    if not mission.mission_text.strip():
        raise ValueError("mission_text must be non-empty")
    rec = _recorder(llm)
    msgs = prompts.initial_messages(mission.mission_text, mission.n_concepts)
    reply = rec.chat("initial_nodes", msgs)
    if messages is not None:
        messages[:] = msgs + [{"role": "assistant", "content": reply}]
    return parse_word_list(reply)[: mission.n_concepts]


def suggest_related(labels, cn) -> dict[str, set[str]]:
    if not labels:
        raise ValueError("labels must be non-empty")
    if isinstance(cn, Recorder):
        return {lab: cn.related(lab) for lab in labels}
    return {lab: set(cn.related(lab)) for lab in labels}


def _suggested_keywords(prev_labels, suggestions) -> list[str]:
    prev = set(prev_labels)
    pool = sorted({w for lab in prev_labels for w in suggestions.get(lab, ())} - prev)
    return pool


def generate_next_layer(prev_labels, suggestions, mission: MissionSpec, llm, messages=None,
                        count=None) -> list[str]:
    if not prev_labels:
        raise ValueError("prev_labels must be non-empty")
    rec = _recorder(llm)
    msgs = prompts.next_messages(
        mission.mission_text,
        prev_labels,
        _suggested_keywords(prev_labels, suggestions),
        count or mission.n_concepts,
    )
    reply = rec.chat("next_nodes", msgs)
    if messages is not None:
        messages[:] = msgs + [{"role": "assistant", "content": reply}]
    return parse_word_list(reply)


def generate_edges(new_label, prev_labels, mission: MissionSpec, llm, messages=None) -> list[str]:
    """Parent labels the model claims for ``new_label``, capped at ``max_parents`` in reply order."""
    if not prev_labels:
        raise ValueError("prev_labels must be non-empty")
    rec = _recorder(llm)
    msgs = prompts.edge_messages(new_label, prev_labels, mission.max_parents)
    reply = rec.chat("edges", msgs)
    if messages is not None:
        messages[:] = msgs + [{"role": "assistant", "content": reply}]
    parents = parse_word_list(reply)
    if len(parents) > mission.max_parents:
        rec.event(event="truncate", label=new_label, dropped=parents[mission.max_parents:])
        parents = parents[: mission.max_parents]
    return parents


def detect_errors(layer_candidates, claimed_edges, graph_so_far, conceptnet_ok=None) -> list[Violation]:
    """Check a proposed layer against the layers already accepted.

    ``claimed_edges`` maps child label -> claimed parent labels (``None`` for
    the key-concept layer). ``graph_so_far`` is the list of accepted layers;
    parents must come from its last entry. ``conceptnet_ok(parent, child)``,
    when given, must also hold for a parent to count as valid.
    """
    out: list[Violation] = []
    earlier = {normalize_label(w) for layer in graph_so_far for w in layer}
    for lab in layer_candidates:
        if normalize_label(lab) in earlier:
            out.append(Violation(DUPLICATE_NODE, lab, "already appears in a previous level"))
    if claimed_edges is None or not graph_so_far:
        return out
    prev = {normalize_label(w) for w in graph_so_far[-1]}
    for child, parents in claimed_edges.items():
        valid = 0
        for p in parents:
            ok = normalize_label(p) in prev and (conceptnet_ok is None or conceptnet_ok(p, child))
            if ok:
                valid += 1
            else:
                out.append(Violation(INVALID_PARENT, child, p))
        if valid == 0:
            out.append(Violation(ZERO_PARENTS, child, "no valid parent in the previous level"))
    return out


@dataclass
class RepairContext:
    """State a repair needs to continue the conversation that produced the error."""

    mission: MissionSpec
    kind: str  # "nodes" or "edges"
    messages: list[dict]
    candidates: list[str]
    earlier_layers: list[list[str]]
    prev_labels: list[str] = field(default_factory=list)
    suggested: list[str] = field(default_factory=list)
    child: str | None = None
    conceptnet_ok: Any = None
    fallback_parents: list[str] = field(default_factory=list)


def _correction(ctx: RepairContext, violations) -> str:
    subj = ctx.mission.mission_text
    if ctx.kind == "nodes":
        dups = prompts.join(v.label for v in violations if v.kind == DUPLICATE_NODE)
        if not ctx.prev_labels:
            return prompts.INITIAL_NODES_CORRECTION.format(dup_nodes=dups, subject=subj)
        return prompts.NEXT_NODES_CORRECTION.format(
            dup_nodes=dups, subject=subj, previous=prompts.join(ctx.prev_labels),
            suggested=prompts.join(ctx.suggested),
        )
    bad = prompts.join(v.detail for v in violations if v.kind == INVALID_PARENT)
    return prompts.EDGE_CORRECTION.format(
        not_appeared=bad, subject=ctx.child, previous=prompts.join(ctx.prev_labels)
    )


def _check(ctx: RepairContext, candidates):
    if ctx.kind == "nodes":
        return detect_errors(candidates, None, ctx.earlier_layers)
    return detect_errors([], {ctx.child: candidates}, [ctx.prev_labels], ctx.conceptnet_ok)


def repair_or_prune(violations, ctx: RepairContext, llm):
    """Issue correction prompts until the proposal is clean or attempts run out, then prune.

    Returns ``(result, attempts)``. For a node layer the result is the final
    label list with offending labels removed; for edges it is the list of
    valid parents (empty means the child must be pruned). ``attempts`` holds
    one record per correction prompt. Raises :class:`EmptyLayer` when a node
    layer ends up empty.
    """
    rec = _recorder(llm)
    attempts: list[dict[str, Any]] = []
    candidates = list(ctx.candidates)
    persona = "initial_nodes" if ctx.kind == "nodes" and not ctx.prev_labels else (
        "next_nodes" if ctx.kind == "nodes" else "edges"
    )
    while violations and len(attempts) < ctx.mission.max_repair_attempts:
        ctx.messages.append({"role": "user", "content": _correction(ctx, violations)})
        reply = rec.chat(persona + "_correction", ctx.messages)
        ctx.messages.append({"role": "assistant", "content": reply})
        record = {"attempt": len(attempts) + 1, "violations": [v.__dict__ for v in violations]}
        try:
            parsed = parse_word_list(reply)
            if ctx.kind == "edges":
                parsed = parsed[: ctx.mission.max_parents]
            candidates = parsed
        except MalformedResponse as exc:
            record["malformed"] = str(exc)
        violations = _check(ctx, candidates)
        record["remaining"] = len(violations)
        attempts.append(record)
        rec.event(event="repair_attempt", kind=ctx.kind, target=ctx.child, **record)

    if ctx.kind == "nodes":
        bad = {v.label for v in violations if v.kind == DUPLICATE_NODE}
        result = [c for c in candidates if c not in bad]
        if bad:
            rec.event(event="prune", kind="nodes", labels=sorted(bad))
        if not result:
            raise EmptyLayer(f"{ctx.mission.mission_id}: every candidate of the layer was pruned")
        return result, attempts

    prev = {normalize_label(p) for p in ctx.prev_labels}
    result = [
        p for p in candidates
        if normalize_label(p) in prev and (ctx.conceptnet_ok is None or ctx.conceptnet_ok(p, ctx.child))
    ]
    dropped = [p for p in candidates if p not in result]
    if dropped:
        rec.event(event="prune", kind="edges", child=ctx.child, parents=dropped)
    return result, attempts


def _propose_nodes(gen, ctx_kwargs, rec, mission, earlier):
    """Run a node generator, retrying malformed replies, then repair duplicates."""
    messages: list[dict] = []
    candidates = None
    for attempt in range(mission.max_repair_attempts + 1):
        try:
            candidates = gen(messages)
            break
        except MalformedResponse as exc:
            rec.event(event="malformed", step="nodes", attempt=attempt + 1, error=str(exc))
    if candidates is None:
        raise EmptyLayer(f"{mission.mission_id}: no parseable node list after retries")
    ctx = RepairContext(mission, "nodes", messages, candidates, earlier, **ctx_kwargs)
    violations = detect_errors(candidates, None, earlier)
    if violations:
        rec.event(event="violations", step="nodes", violations=[v.__dict__ for v in violations])
    layer, _ = repair_or_prune(violations, ctx, rec)
    return layer


def generate_graph(mission: MissionSpec, llm, cn, edges_require_conceptnet=False,
                   layer_width=None) -> ReasoningGraph:
    """Generate, repair and assemble the reasoning graph of one mission.

    ``layer_width`` sets how many words each sub-graph layer asks for
    (defaults to ``n_concepts``).
    """
    rec = Recorder(llm, cn)
    width = layer_width or mission.n_concepts

    first = _propose_nodes(
        lambda msgs: generate_initial_concepts(mission, rec, msgs), {}, rec, mission, []
    )
    layers = [first]
    edges: list[tuple[str, str, str]] = []

    for k in range(1, mission.sub_depth + 1):
        prev = layers[-1]
        suggestions = suggest_related(prev, rec)
        suggested = _suggested_keywords(prev, suggestions)

        def cn_ok(parent, child, _s=suggestions):
            return normalize_label(child) in _s.get(parent, set())

        cn_check = cn_ok if edges_require_conceptnet else None
        candidates = _propose_nodes(
            lambda msgs: generate_next_layer(prev, suggestions, mission, rec, msgs, count=width),
            {"prev_labels": prev, "suggested": suggested},
            rec, mission, layers,
        )

        layer, layer_edges = [], []
        for child in candidates:
            messages: list[dict] = []
            try:
                parents = generate_edges(child, prev, mission, rec, messages)
            except MalformedResponse as exc:
                rec.event(event="malformed", step="edges", child=child, error=str(exc))
                parents = []
            fallback = [p for p in prev if cn_ok(p, child)][: mission.max_parents]
            ctx = RepairContext(
                mission, "edges", messages, parents, layers, prev_labels=prev,
                child=child, conceptnet_ok=cn_check, fallback_parents=fallback,
            )
            violations = detect_errors([], {child: parents}, [prev], cn_check)
            if violations:
                rec.event(event="violations", step="edges", child=child,
                          violations=[v.__dict__ for v in violations])
            valid, _ = repair_or_prune(violations, ctx, rec)
            provenance = "llm_selected"
            if not valid and fallback:
                valid, provenance = fallback, "conceptnet"
                rec.event(event="conceptnet_fallback", child=child, parents=fallback)
            if not valid:
                rec.event(event="prune", kind="nodes", labels=[child], reason=ZERO_PARENTS)
                continue
            layer.append(child)
            layer_edges.extend((p, child, provenance) for p in valid)
        if not layer:
            raise EmptyLayer(f"{mission.mission_id}: sub-graph layer {k} lost every node")
        layers.append(layer)
        edges.extend(layer_edges)

    return assemble_graph(layers, edges, mission, rec.trace)
