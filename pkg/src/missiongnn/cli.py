"""Command-line entry point: ``missiongnn <command> [options]``.

Every ``Config`` field is also a flag (``--lr 1e-3``, ``--use-loss-smt false``);
precedence is preset < ``--config`` file < flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shutil
import sys
from pathlib import Path

from .config import Config, load_config, parse_overrides, preset
from .embedding_store import (
    CacheBackend,
    EmbeddingStore,
    HttpEmbeddingBackend,
    SyntheticBackend,
    cache_write,
    frame_key,
)
from .hgnn import ShapeMismatch
from .kg import (
    EmptyLayer,
    FileConceptNet,
    HttpConceptNet,
    HttpLlmClient,
    MalformedResponse,
    MissionSpec,
    ReasoningGraph,
    ScriptedLlm,
    ServiceUnavailable,
    StructuralViolation,
    SyntheticLlm,
    generate_graph,
    validate_graph,
)
from .manifest import DatasetManifest
from .metrics_eval import context_sweep, evaluate, score_records, write_scores
from .model import MissionGnnModel
from .streaming import run_stream
from .synthetic import UCF_CRIME_CLASSES, class_signals, synthetic_manifest, videos_from_manifest
from .trainer import (
    MissingClass,
    NonFiniteLoss,
    TrainState,
    TrainVideo,
    class_weights,
    load_model,
    quick_eval,
    train_loop,
)

log = logging.getLogger("missiongnn")

EXIT_GENERATION = 2
EXIT_VALIDATION = 3
EXIT_NONFINITE = 4
EXIT_DIMENSION = 5

CLASS_INDEX = "classes.json"


# ------------------------------------------------------------------- config


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--preset", default="paper", help="base preset (paper, paper_decay099, synthetic)")
    for f in dataclasses.fields(Config):
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar="V")


def resolve_config(args) -> Config:
    cfg = preset(args.preset)
    if args.config:
        cfg = load_config(args.config, cfg)
    raw = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return cfg.replace(**parse_overrides(raw))


# --------------------------------------------------------------- components


def make_llm(cfg: Config):
    kind, _, arg = cfg.llm_backend.partition(":")
    if kind == "synthetic":
        return SyntheticLlm(cfg.seed)
    if kind == "http":
        return HttpLlmClient()
    if kind == "scripted":
        return ScriptedLlm(json.loads(Path(arg).read_text(encoding="utf-8")))
    raise ValueError(f"unknown llm_backend {cfg.llm_backend!r}")


def make_conceptnet(cfg: Config):
    if cfg.conceptnet_backend == "http":
        return HttpConceptNet()
    if cfg.conceptnet_backend == "file":
        return FileConceptNet(cfg.conceptnet_file or None)
    raise ValueError(f"unknown conceptnet_backend {cfg.conceptnet_backend!r}")


def load_graphs(directory) -> list[ReasoningGraph]:
    d = Path(directory)
    order = json.loads((d / CLASS_INDEX).read_text(encoding="utf-8"))
    return [ReasoningGraph.load(d / f"{mid}.json") for mid in order]


def load_manifest(args, cfg: Config, n_classes: int) -> DatasetManifest:
    if args.manifest:
        return DatasetManifest.load(args.manifest, n_classes, cfg.T)
    return synthetic_manifest(n_classes, args.n_train, args.n_test, args.frames, cfg.seed)


def make_store(cfg: Config, graphs, manifest) -> EmbeddingStore:
    kind, _, arg = cfg.embedding_backend.partition(":")
    if kind == "synthetic":
        backend = SyntheticBackend(dim=cfg.d_emb, seed=cfg.seed, beta=cfg.signal_beta)
        backend.class_signals = class_signals(graphs, backend)
        backend.videos = {v.video_id: v for v in videos_from_manifest(manifest)}
    elif kind == "cache":
        backend = CacheBackend(arg)
    elif kind == "http":
        backend = HttpEmbeddingBackend(arg, cfg.d_emb)
    else:
        raise ValueError(f"unknown embedding_backend {cfg.embedding_backend!r}")
    return EmbeddingStore(backend)


def _add_data_flags(p, graphs_required=True) -> None:
    p.add_argument("--graphs", required=graphs_required, help="directory written by kg-build")
    p.add_argument("--manifest", help="JSON-lines manifest; synthetic one generated when omitted")
    p.add_argument("--n-train", type=int, default=60)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--frames", type=int, default=300)


def _test_videos(manifest, store, split="test"):
    for e in manifest.split(split):
        yield e.video_id, store.embed_video(e.video_id, e.frame_count), e.frame_labels()


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ----------------------------------------------------------------- commands


def cmd_kg_build(args, cfg: Config) -> int:
    if args.classes:
        names = [c.strip() for c in args.classes.split(",") if c.strip()]
    else:
        names = list(UCF_CRIME_CLASSES[: args.n_classes])
    out = Path(args.out)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def cleanup():
        for p in written:
            p.unlink(missing_ok=True)
        if created:
            shutil.rmtree(out, ignore_errors=True)

    llm, cn = make_llm(cfg), make_conceptnet(cfg)
    order = []
    for name in names:
        mission = MissionSpec(
            mission_id=name.lower().replace(" ", "_"), mission_text=name,
            n_concepts=cfg.n_concepts, sub_depth=cfg.d_sub, max_parents=cfg.max_parents,
            max_repair_attempts=cfg.max_repair_attempts,
        )
        try:
            g = generate_graph(mission, llm, cn, cfg.edges_require_conceptnet)
        except (EmptyLayer, ServiceUnavailable, MalformedResponse) as exc:
            log.error("generation failed for %s: %s", name, exc)
            cleanup()
            return EXIT_GENERATION
        except StructuralViolation as exc:
            log.error("invalid graph for %s: %s", name, exc)
            cleanup()
            return EXIT_VALIDATION
        problems = validate_graph(g)
        if problems:
            log.error("invalid graph for %s: %s", name, problems)
            cleanup()
            return EXIT_VALIDATION
        path = out / f"{mission.mission_id}.json"
        g.save(path)
        written.append(path)
        order.append(mission.mission_id)
        print(f"{name}: {len(g.nodes)} nodes, {len(g.edges)} edges -> {path}")
    idx = out / CLASS_INDEX
    idx.write_text(json.dumps(order) + "\n", encoding="utf-8")
    return 0


def cmd_embed_cache(args, cfg: Config) -> int:
    graphs = load_graphs(args.graphs)
    manifest = load_manifest(args, cfg, len(graphs))
    store = make_store(cfg, graphs, manifest)
    rows = {}
    for g in graphs:
        for n in g.nodes:
            if n.label:
                rows[n.label] = store.embed_text(n.label)
    for e in manifest:
        frames = store.embed_video(e.video_id, e.frame_count)
        for t in range(e.frame_count):
            rows[frame_key(e.video_id, t)] = frames[t]
    cache_write(args.out, rows)
    if not args.manifest and args.write_manifest:
        manifest.save(args.write_manifest)
    print(f"wrote {len(rows)} rows of width {store.dim} to {args.out}")
    return 0


def cmd_train(args, cfg: Config) -> int:
    if args.resume:
        state = TrainState.load(args.resume)
        cfg = state.config.replace(steps=cfg.steps)
        state.config = cfg
        graphs = [b.graph for b in state.model.branches]
    else:
        graphs = load_graphs(args.graphs)
    manifest = load_manifest(args, cfg, len(graphs))
    store = make_store(cfg, graphs, manifest)
    if not args.resume:
        model = MissionGnnModel.build(
            graphs, store, gnn_dim=cfg.gnn_dim, ffn_dim=cfg.ffn_dim, heads=cfg.heads, T=cfg.T,
            seed=cfg.seed, positional=cfg.positional, dropout=cfg.dropout,
        )
        state = TrainState.create(model, cfg)
        try:
            state.weights.lambda_a = class_weights(manifest, range(1, len(graphs) + 1))
        except MissingClass as exc:
            log.error("%s", exc)
            return EXIT_VALIDATION
    counts = state.model.parameter_counts()
    print("trainable parameters: " + ", ".join(f"{k}={v}" for k, v in counts.items()))

    train = [TrainVideo(e.video_id, e.video_label, store.embed_video(e.video_id, e.frame_count))
             for e in manifest.split("train")]
    test = [(f, y) for _, f, y in _test_videos(manifest, store)] if cfg.eval_every else []
    names = [b.mission_id for b in state.model.branches]
    remaining = max(cfg.steps - state.iter, 0)
    try:
        train_loop(state, train, remaining, log_path=args.log,
                   eval_fn=(lambda s: quick_eval(s.model, test, names)) if test else None,
                   checkpoint_path=args.out)
    except NonFiniteLoss as exc:
        dump = Path(str(args.out) + ".nonfinite.json")
        _write_json(dump, exc.dump)
        log.error("%s (diagnostics in %s)", exc, dump)
        return EXIT_NONFINITE
    print(f"checkpoint at iter {state.iter} -> {args.out}")
    return 0


def cmd_eval(args, cfg: Config) -> int:
    model = load_model(args.checkpoint)
    graphs = [b.graph for b in model.branches]
    manifest = load_manifest(args, cfg, len(graphs))
    store = make_store(cfg, graphs, manifest)
    try:
        records = score_records(model, _test_videos(manifest, store, args.split), args.window)
    except ShapeMismatch as exc:
        log.error("dimension mismatch: %s", exc)
        return EXIT_DIMENSION
    report = evaluate(records, var_score=cfg.var_score, class_names=model.mission_ids())
    if args.scores:
        write_scores(args.scores, records)
    _write_json(args.out, report.to_dict())
    return 0


def cmd_stream(args, cfg: Config) -> int:
    model = load_model(args.checkpoint)
    src = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    dst = sys.stdout if args.output == "-" else open(args.output, "w", encoding="utf-8")
    try:
        stats = run_stream(model, src, dst, args.window)
    finally:
        if src is not sys.stdin:
            src.close()
        if dst is not sys.stdout:
            dst.close()
    print(json.dumps(stats), file=sys.stderr)
    return 0


def cmd_context_sweep(args, cfg: Config) -> int:
    model = load_model(args.checkpoint)
    graphs = [b.graph for b in model.branches]
    manifest = load_manifest(args, cfg, len(graphs))
    store = make_store(cfg, graphs, manifest)
    T_values = [int(t) for t in args.T_values.split(",")]
    try:
        rows = context_sweep(model, _test_videos(manifest, store, args.split), T_values,
                             model.mission_ids())
    except ShapeMismatch as exc:
        log.error("dimension mismatch: %s", exc)
        return EXIT_DIMENSION
    _write_json(args.out, rows)
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="missiongnn")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kg-build", help="generate one reasoning graph per anomaly class")
    k.add_argument("--classes", help="comma-separated class names")
    k.add_argument("--n-classes", type=int, default=len(UCF_CRIME_CLASSES))
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_kg_build)

    e = sub.add_parser("embed-cache", help="write label and frame embeddings to a binary cache")
    _add_data_flags(e)
    e.add_argument("--out", required=True)
    e.add_argument("--write-manifest", help="save the generated synthetic manifest here")
    e.set_defaults(func=cmd_embed_cache)

    t = sub.add_parser("train", help="train a detector")
    _add_data_flags(t, graphs_required=False)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="JSON-lines loss log")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="frame-level metrics for a checkpoint")
    _add_data_flags(v, graphs_required=False)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--split", default="test")
    v.add_argument("--window", type=int, help="context size override")
    v.add_argument("--scores", help="also write per-frame score records")
    v.add_argument("--out", default="-")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("stream", help="score a JSON-lines embedding feed frame by frame")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", default="-")
    s.add_argument("--output", default="-")
    s.add_argument("--window", type=int)
    s.set_defaults(func=cmd_stream)

    c = sub.add_parser("context-sweep", help="re-score with several context sizes")
    _add_data_flags(c, graphs_required=False)
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--split", default="test")
    c.add_argument("--T-values", default="10,20,30")
    c.add_argument("--out", default="-")
    c.set_defaults(func=cmd_context_sweep)

    for sp in (k, e, t, v, s, c):
        _add_config_flags(sp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (KeyError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    if args.command == "train" and not (args.graphs or args.resume):
        print("train needs --graphs or --resume", file=sys.stderr)
        return 1
    return args.func(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
