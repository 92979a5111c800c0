"""Single entry point for the full workflow.

Subcommands: ingest, index, run, audit, metrics, serve.

Exit codes:
  0  success (audit: no invalid citations)
  1  audit found invalid citations / refusal to clobber without --force
  2  empty corpus, missing inputs, or empty run directory
  3  stale embedder
  4  endpoint unavailable or pipeline stage failure

Config precedence: flags > env (VERIDEX_*) > TOML file (--config) > defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .citations import audit_artifact
from .config import (
    build_chunking_config,
    build_run_config,
    resolve_settings,
)
from .errors import (
    EmptyCorpus,
    EmptyRun,
    EndpointUnavailable,
    StaleEmbedder,
    StageFailure,
    VeridexError,
)
from .index import EmbedderEndpoint, EmbeddingClient, VectorIndex, build_index
from .ingest import ChunkStore, load_corpus, read_chunks, read_manifest, write_chunks, write_manifest
from .metrics import (
    BRIEF_REPORT_ID,
    AnnotationSet,
    compute_metrics,
    emit_csv,
    emit_table,
    load_annotations,
)
from .pipeline import SearchPlan, run_pipeline


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _settings(args: argparse.Namespace) -> dict:
    flags = {
        name: getattr(args, name)
        for name in (
            "endpoint",
            "model",
            "temperature",
            "max_output_tokens",
            "context_window_tokens",
            "embedder_url",
            "embedder_model",
            "k",
            "min_score",
            "judge_min_relevance",
            "judge_min_coverage",
            "max_search_calls",
            "max_model_turns",
            "target_chunk_chars",
            "overlap_chars",
            "split_strategy",
        )
        if hasattr(args, name)
    }
    return resolve_settings(flags=flags, config_path=getattr(args, "config", None))


def cmd_ingest(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists() and not args.force:
        return _fail(f"{run_dir} already contains a manifest; use --force to re-ingest", 1)
    settings = _settings(args)
    try:
        cfg = build_chunking_config(settings)
        result = load_corpus(args.corpus_dir, cfg)
    except (EmptyCorpus, ValueError) as exc:
        return _fail(str(exc), 2)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(result.manifest, manifest_path)
    write_chunks(result.chunks, run_dir / "chunks.jsonl")
    summary = {
        "manifest": str(manifest_path),
        "documents": len(result.manifest.documents),
        "chunks": len(result.chunks),
        "skipped_files": result.manifest.skipped_files,
    }
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(
            f"ingested {summary['documents']} documents "
            f"({summary['chunks']} chunks, {summary['skipped_files']} skipped) -> {manifest_path}"
        )
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "manifest.json").exists():
        return _fail(f"no manifest.json in {run_dir}; run ingest first", 2)
    settings = _settings(args)
    index_path = run_dir / "index.jsonl"
    endpoint = EmbedderEndpoint(url=settings["embedder_url"], model=settings["embedder_model"])
    if index_path.exists() and not args.force:
        try:
            VectorIndex.load(index_path, expect_embedder_id=None)
            header = json.loads(index_path.read_text(encoding="utf-8").split("\n", 1)[0])
            if header["embedder_id"].rsplit("@", 1)[0] != endpoint.model:
                return _fail(
                    f"existing index was built with {header['embedder_id']!r}; "
                    f"use --force to rebuild with {endpoint.model!r}",
                    3,
                )
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            return _fail(f"existing index unreadable: {exc}; use --force", 1)
    chunks = read_chunks(run_dir / "chunks.jsonl")
    client = EmbeddingClient(endpoint)
    try:
        index = build_index(chunks, client)
    except EndpointUnavailable as exc:
        return _fail(str(exc), 4)
    except VeridexError as exc:
        return _fail(str(exc), 1)
    index.save(index_path)
    summary = {"index": str(index_path), "entries": len(index), "embedder_id": index.embedder_id}
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(f"indexed {summary['entries']} chunks with {index.embedder_id} -> {index_path}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    settings = _settings(args)
    settings["stages_through"] = args.stages
    cfg = build_run_config(run_dir, settings)
    try:
        result = run_pipeline(cfg, progress=None if args.json else _print_stage)
    except StaleEmbedder as exc:
        return _fail(str(exc), 3)
    except StageFailure as exc:
        return _fail(str(exc), 4)
    except VeridexError as exc:
        return _fail(str(exc), 4)
    if args.json:
        print(
            json.dumps(
                {
                    "status": result.status,
                    "run_dir": str(run_dir),
                    "threads": sorted(result.reports),
                    "failed_threads": result.failed_threads,
                    "stage_timings_ms": result.timings_ms,
                },
                indent=2,
            )
        )
    else:
        print(f"run {result.status}: artifacts in {run_dir}")
    return 0


def _print_stage(stage: str, ms: int) -> None:
    print(f"stage {stage}: done in {ms} ms")


def _collect_artifact_texts(run_dir: Path) -> dict[str, str]:
    texts: dict[str, str] = {}
    threads_dir = run_dir / "threads"
    if threads_dir.is_dir():
        for p in sorted(threads_dir.glob("thread_*.md")):
            texts[p.stem.split("_", 1)[1]] = p.read_text(encoding="utf-8")
    brief = run_dir / "brief.md"
    if brief.exists():
        texts[BRIEF_REPORT_ID] = brief.read_text(encoding="utf-8")
    return texts


def cmd_audit(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        return _fail(f"no manifest.json in {run_dir}", 2)
    manifest = read_manifest(manifest_path)
    chunk_store = ChunkStore(read_chunks(run_dir / "chunks.jsonl"))
    texts = _collect_artifact_texts(run_dir)
    if not texts:
        return _fail(f"no citation-bearing artifacts in {run_dir}", 2)

    tables = {rid: audit_artifact(text, manifest, chunk_store) for rid, text in texts.items()}
    total = sum(t.total for t in tables.values())
    invalid = sum(t.invalid for t in tables.values())
    rate = invalid / total if total else 0.0
    payload = {
        "schema_version": 1,
        "run_dir": str(run_dir),
        "total_citations": total,
        "invalid_citations": invalid,
        "invalid_rate": rate,
        "per_artifact": {rid: t.to_dict() for rid, t in sorted(tables.items())},
    }
    (run_dir / "audit.json").write_text(
        json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    md_lines = ["# Citation Audit", ""]
    for rid, t in sorted(tables.items()):
        md_lines += [f"## {rid}", t.to_markdown()]
    (run_dir / "audit.md").write_text("\n".join(md_lines), encoding="utf-8")

    if args.json:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        summary = "no citations" if total == 0 else f"invalid rate {rate:.2f} ({invalid}/{total})"
        print(f"audited {len(tables)} artifacts: {summary}")
    return 1 if invalid else 0


def cmd_metrics(args: argparse.Namespace) -> int:
    rows = []
    payloads = []
    for run_dir_arg in args.run_dirs:
        run_dir = Path(run_dir_arg)
        manifest_path = run_dir / "manifest.json"
        if not manifest_path.exists():
            return _fail(f"no manifest.json in {run_dir}", 2)
        manifest = read_manifest(manifest_path)
        chunk_store = ChunkStore(read_chunks(run_dir / "chunks.jsonl"))
        texts = _collect_artifact_texts(run_dir)
        if not texts:
            return _fail(f"no report artifacts in {run_dir}", 2)

        ann_path = Path(args.annotations) if args.annotations else run_dir / "annotations.jsonl"
        if ann_path.exists():
            annotations = load_annotations(ann_path)
        else:
            annotations = AnnotationSet()
            print(f"warning: no annotations at {ann_path}; machine metrics only", file=sys.stderr)

        plan = None
        plan_path = run_dir / "plan.json"
        if plan_path.exists():
            plan = SearchPlan.from_dict(json.loads(plan_path.read_text(encoding="utf-8")))

        run_info = {}
        run_path = run_dir / "run.json"
        if run_path.exists():
            run_info = json.loads(run_path.read_text(encoding="utf-8"))
        model = args.model or run_info.get("config", {}).get("model_name", "unknown")
        corpus = args.corpus or manifest.corpus_name

        try:
            report = compute_metrics(
                annotations, plan, texts, manifest, chunk_store, model=model, corpus=corpus
            )
        except (EmptyRun, VeridexError) as exc:
            return _fail(str(exc), 2)

        rows.append((model, corpus, report))
        payloads.append(report.to_dict())
        (run_dir / "metrics.json").write_text(
            json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        (run_dir / "metrics.md").write_text(emit_table([(model, corpus, report)]), encoding="utf-8")
        (run_dir / "metrics.csv").write_text(emit_csv([(model, corpus, report)]), encoding="utf-8")

    if args.json:
        print(json.dumps(payloads if len(payloads) > 1 else payloads[0], indent=2, ensure_ascii=False))
    else:
        print(emit_table(rows), end="")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app

    run_dir = Path(args.run_dir)
    try:
        app = create_app(run_dir, ui_dir=args.ui)
    except FileNotFoundError as exc:
        return _fail(str(exc), 2)
    try:
        uvicorn.run(app, host=args.bind, port=args.port, log_level="warning")
    except OSError as exc:
        return _fail(f"cannot bind {args.bind}:{args.port}: {exc}", 1)
    return 0


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--json", action="store_true", help="machine-parseable output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="veridex", description=__doc__.split("\n", 1)[0])
    parser.add_argument("--version", action="version", version=f"veridex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, normalize, and chunk a corpus directory")
    p.add_argument("corpus_dir")
    p.add_argument("run_dir")
    p.add_argument("--force", action="store_true", help="re-ingest into a populated run dir")
    p.add_argument("--target-chunk-chars", dest="target_chunk_chars", type=int)
    p.add_argument("--overlap-chars", dest="overlap_chars", type=int)
    p.add_argument("--split-strategy", dest="split_strategy", choices=["paragraph-first", "fixed-window"])
    _add_config_flag(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="embed chunks into the exact-search index")
    p.add_argument("run_dir")
    p.add_argument("--force", action="store_true", help="rebuild over a different embedder")
    p.add_argument("--embedder-url", dest="embedder_url")
    p.add_argument("--embedder-model", dest="embedder_model")
    _add_config_flag(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("run", help="execute the five-stage pipeline")
    p.add_argument("run_dir")
    p.add_argument("--stages", default="synthesis",
                   choices=["synopsis", "plan", "threads", "judge", "synthesis"],
                   help="run through this stage and stop")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-output-tokens", dest="max_output_tokens", type=int)
    p.add_argument("--context-window-tokens", dest="context_window_tokens", type=int)
    p.add_argument("--embedder-url", dest="embedder_url")
    p.add_argument("--embedder-model", dest="embedder_model")
    p.add_argument("-k", dest="k", type=int, help="retrieval depth per query")
    p.add_argument("--min-score", dest="min_score", type=float)
    p.add_argument("--judge-min-relevance", dest="judge_min_relevance", type=int)
    p.add_argument("--judge-min-coverage", dest="judge_min_coverage", type=int)
    p.add_argument("--max-search-calls", dest="max_search_calls", type=int)
    p.add_argument("--max-model-turns", dest="max_model_turns", type=int)
    _add_config_flag(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="resolve every citation in the run's artifacts")
    p.add_argument("run_dir")
    _add_config_flag(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("metrics", help="compute the four metrics from annotations + audits")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--annotations", help="annotations.jsonl (default: <run_dir>/annotations.jsonl)")
    p.add_argument("--model", help="row label override")
    p.add_argument("--corpus", help="row label override")
    _add_config_flag(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("serve", help="serve the annotation API (and optional UI) for a run")
    p.add_argument("run_dir")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--bind", default="127.0.0.1",
                   help="bind address (local-only by default; sensitive corpora stay on-box)")
    p.add_argument("--ui", help="directory of built UI assets to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
