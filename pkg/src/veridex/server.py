"""HTTP JSON API over one run directory: read artifacts and chunks, write
annotations. This is the single persistence path for the review UI.

All payloads carry schema_version. Writes are serialized; conflicting
writes to the same annotation resolve last-write-wins with a per-identity
version counter.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles

from . import metrics as metrics_mod
from .citations import parse_key, resolve
from .ingest import ChunkStore, read_chunks, read_manifest
from .pipeline import SearchPlan

SCHEMA_VERSION = 1


class AnnotationStore:
    """Append-only annotations.jsonl with latest-wins in-memory view."""

    _IDENTITY = {
        "claim": lambda d: ("claim", str(d["report_id"]), int(d["claim_id"])),
        "sub_objective": lambda d: ("sub_objective", int(d["thread_id"]), int(d["sub_objective_index"])),
        "segmentation": lambda d: ("segmentation", str(d["report_id"])),
    }

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self._latest: dict[tuple, dict] = {}
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        record = json.loads(line)
                        self._latest[self._identity(record)] = record

    def _identity(self, record: dict) -> tuple:
        kind = record.get("kind", "claim")
        if kind not in self._IDENTITY:
            raise ValueError(f"unknown annotation kind {kind!r}")
        return self._IDENTITY[kind](record)

    def put(self, record: dict) -> dict:
        kind = record.get("kind", "claim")
        if kind == "claim":
            metrics_mod.ClaimAnnotation.from_dict(record)
        elif kind == "sub_objective":
            metrics_mod.SubObjectiveOutcome.from_dict(record)
        elif kind == "segmentation":
            if "report_id" not in record or not isinstance(record.get("claims"), list):
                raise ValueError("segmentation needs report_id and a claims list")
        else:
            raise ValueError(f"unknown annotation kind {kind!r}")

        with self._lock:
            identity = self._identity(record)
            previous = self._latest.get(identity)
            record = dict(record)
            record["schema_version"] = SCHEMA_VERSION
            record["version"] = (previous.get("version", 0) + 1) if previous else 1
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            self._latest[identity] = record
            return record

    def snapshot(self) -> dict:
        with self._lock:
            claims, outcomes, segmentations = [], [], []
            for record in self._latest.values():
                kind = record.get("kind", "claim")
                if kind == "claim":
                    claims.append(record)
                elif kind == "sub_objective":
                    outcomes.append(record)
                else:
                    segmentations.append(record)
        return {
            "schema_version": SCHEMA_VERSION,
            "claims": claims,
            "sub_objectives": outcomes,
            "segmentations": segmentations,
        }


def create_app(run_dir: Path | str, ui_dir: Path | str | None = None) -> FastAPI:
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {run_dir}; ingest first")

    manifest = read_manifest(manifest_path)
    chunk_store = ChunkStore(read_chunks(run_dir / "chunks.jsonl"))
    store = AnnotationStore(run_dir / "annotations.jsonl")
    titles = {d["doc_id"]: d["title"] for d in manifest.documents}

    app = FastAPI(title="veridex review API")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def _report_ids() -> list[int]:
        threads_dir = run_dir / "threads"
        if not threads_dir.is_dir():
            return []
        ids = []
        for p in threads_dir.glob("thread_*.json"):
            try:
                ids.append(int(p.stem.split("_")[1]))
            except (IndexError, ValueError):
                continue
        return sorted(ids)

    def _load_report(thread_id: int) -> dict:
        path = run_dir / "threads" / f"thread_{thread_id}.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no thread report {thread_id}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        md = run_dir / "threads" / f"thread_{thread_id}.md"
        payload["markdown"] = md.read_text(encoding="utf-8") if md.exists() else ""
        return payload

    @app.get("/api/manifest")
    def get_manifest():
        return {"schema_version": SCHEMA_VERSION, "manifest": manifest.to_dict()}

    @app.get("/api/reports")
    def list_reports():
        reports = []
        for tid in _report_ids():
            payload = _load_report(tid)
            reports.append(
                {
                    "thread_id": tid,
                    "status": payload.get("status", "ok"),
                    "objective": payload.get("thread", {}).get("objective", ""),
                    "findings": len(payload.get("findings", [])),
                }
            )
        return {"schema_version": SCHEMA_VERSION, "reports": reports}

    @app.get("/api/reports/{thread_id}")
    def get_report(thread_id: int):
        return {"schema_version": SCHEMA_VERSION, "report": _load_report(thread_id)}

    @app.get("/api/brief")
    def get_brief():
        path = run_dir / "brief.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail="no brief in this run")
        payload = json.loads(path.read_text(encoding="utf-8"))
        md = run_dir / "brief.md"
        payload["markdown"] = md.read_text(encoding="utf-8") if md.exists() else ""
        return {"schema_version": SCHEMA_VERSION, "brief": payload}

    @app.get("/api/plan")
    def get_plan():
        path = run_dir / "plan.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail="no plan in this run")
        return {
            "schema_version": SCHEMA_VERSION,
            "plan": json.loads(path.read_text(encoding="utf-8")),
        }

    @app.get("/api/resolve/{key}")
    def resolve_key(key: str):
        ref = parse_key(key)
        if ref is None:
            raise HTTPException(status_code=400, detail=f"malformed citation key {key!r}")
        result = resolve(ref, manifest, chunk_store)
        count = manifest.chunk_count_by_doc.get(ref.doc_id, 0)
        return {
            "schema_version": SCHEMA_VERSION,
            "key": key,
            "status": result.status,
            "passage": result.passage,
            "doc_title": titles.get(ref.doc_id),
            "chunk_index": ref.chunk_index,
            "chunk_count": count,
            "has_prev": result.status == "valid" and ref.chunk_index > 0,
            "has_next": result.status == "valid" and ref.chunk_index + 1 < count,
        }

    @app.get("/api/annotations")
    def get_annotations():
        return store.snapshot()

    @app.post("/api/annotations")
    def post_annotation(record: dict):
        try:
            stored = store.put(record)
        except (ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"schema_version": SCHEMA_VERSION, "annotation": stored}

    @app.get("/api/metrics")
    def get_metrics():
        report_texts = {}
        for tid in _report_ids():
            md = run_dir / "threads" / f"thread_{tid}.md"
            if md.exists():
                report_texts[str(tid)] = md.read_text(encoding="utf-8")
        brief_md = run_dir / "brief.md"
        if brief_md.exists():
            report_texts[metrics_mod.BRIEF_REPORT_ID] = brief_md.read_text(encoding="utf-8")
        if not report_texts:
            raise HTTPException(status_code=404, detail="no reports in this run")

        snapshot = store.snapshot()
        annotations = metrics_mod.AnnotationSet(
            claims=[metrics_mod.ClaimAnnotation.from_dict(c) for c in snapshot["claims"]],
            outcomes=[
                metrics_mod.SubObjectiveOutcome.from_dict(o) for o in snapshot["sub_objectives"]
            ],
            segmentations=snapshot["segmentations"],
        )
        plan = None
        plan_path = run_dir / "plan.json"
        if plan_path.exists():
            plan = SearchPlan.from_dict(json.loads(plan_path.read_text(encoding="utf-8")))
        run_info = {}
        run_path = run_dir / "run.json"
        if run_path.exists():
            run_info = json.loads(run_path.read_text(encoding="utf-8"))
        report = metrics_mod.compute_metrics(
            annotations,
            plan,
            report_texts,
            manifest,
            chunk_store,
            model=run_info.get("config", {}).get("model_name", ""),
            corpus=manifest.corpus_name,
        )
        return report.to_dict()

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
