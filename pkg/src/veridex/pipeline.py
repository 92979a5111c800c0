"""Five-stage orchestration: corpus synopsis, search planning, isolated
thread execution, judge gating, synthesis.

Each stage emits a Markdown artifact for humans plus a JSON sidecar for
machines. The citation firewall sits between model output and artifact:
a report may only cite keys that were retrieved for it, and the brief may
only cite keys already cited by a passing report. Violations are
regenerated once, then stripped and logged; the firewall polices key
validity only, never claim truth.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .citations import CITATION_RE, extract_citations
from .config import RunConfig, ThreadBudget
from .errors import (
    ContextOverflow,
    NoPassingReports,
    RunLocked,
    SchemaViolation,
    StageFailure,
    VeridexError,
)
from .gateway import AuditLog, ChatGateway, estimate_tokens
from .index import EmbeddingClient, SearchHit, VectorIndex, search
from .ingest import ChunkStore, CorpusManifest, read_chunks, read_manifest
from . import prompts
from .schemas import JUDGE_VERDICT, SEARCH_PLAN

STAGE_ORDER = ("synopsis", "plan", "threads", "judge", "synthesis")

_HEADING_RE = re.compile(r"^##\s+(.+?)\s*$", re.MULTILINE)
_BULLET_RE = re.compile(r"^\s*(?:[-*]|\d+\.)\s+(.*\S)\s*$")


# -- domain types --------------------------------------------------------

@dataclass
class CorpusSynopsis:
    topics: list[str]
    recurring_themes: list[str]
    gaps: list[str]
    source_manifest: dict
    truncated_docs: int
    snippet_chars: int
    raw_markdown: str

    def to_dict(self) -> dict:
        return {
            "topics": self.topics,
            "recurring_themes": self.recurring_themes,
            "gaps": self.gaps,
            "source_manifest": self.source_manifest,
            "truncated_docs": self.truncated_docs,
            "snippet_chars": self.snippet_chars,
        }


@dataclass(frozen=True)
class SearchThread:
    thread_id: int
    objective: str
    sub_objectives: list[str]
    candidate_queries: list[str]

    def to_dict(self) -> dict:
        return {
            "thread_id": self.thread_id,
            "objective": self.objective,
            "sub_objectives": list(self.sub_objectives),
            "candidate_queries": list(self.candidate_queries),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchThread":
        return cls(
            thread_id=d["thread_id"],
            objective=d["objective"],
            sub_objectives=list(d["sub_objectives"]),
            candidate_queries=list(d["candidate_queries"]),
        )


@dataclass
class SearchPlan:
    threads: list[SearchThread]
    synopsis_digest: str

    def to_dict(self) -> dict:
        return {
            "synopsis_digest": self.synopsis_digest,
            "threads": [t.to_dict() for t in self.threads],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchPlan":
        return cls(
            threads=[SearchThread.from_dict(t) for t in d["threads"]],
            synopsis_digest=d["synopsis_digest"],
        )


@dataclass
class Finding:
    claim: str
    keys: list[str]


@dataclass
class SearchLogEntry:
    query: str
    hit_keys: list[str]
    used: bool = False


@dataclass
class ThreadReport:
    thread_id: int
    narrative: str
    findings: list[Finding]
    open_questions: list[str]
    next_step_queries: list[str]
    search_log: list[SearchLogEntry]
    unsupported_statements: list[str] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)
    skipped_queries: list[str] = field(default_factory=list)
    budget_exhausted: bool = False

    def retrieved_keys(self) -> set[str]:
        return {k for entry in self.search_log for k in entry.hit_keys}

    def cited_keys(self) -> list[str]:
        """Ordered unique keys cited in narrative and findings."""
        seen: list[str] = []
        for ref in extract_citations(self.narrative):
            if ref.key not in seen:
                seen.append(ref.key)
        for f in self.findings:
            for k in f.keys:
                if k not in seen:
                    seen.append(k)
        return seen

    def to_dict(self) -> dict:
        return {
            "thread_id": self.thread_id,
            "status": "ok",
            "narrative": self.narrative,
            "findings": [{"claim": f.claim, "keys": f.keys} for f in self.findings],
            "open_questions": self.open_questions,
            "next_step_queries": self.next_step_queries,
            "unsupported_statements": self.unsupported_statements,
            "search_log": [
                {"query": e.query, "hit_keys": e.hit_keys, "used": e.used}
                for e in self.search_log
            ],
            "skipped_queries": self.skipped_queries,
            "budget_exhausted": self.budget_exhausted,
            "violations": self.violations,
            "cited_keys": self.cited_keys(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThreadReport":
        return cls(
            thread_id=d["thread_id"],
            narrative=d["narrative"],
            findings=[Finding(claim=f["claim"], keys=list(f["keys"])) for f in d["findings"]],
            open_questions=list(d["open_questions"]),
            next_step_queries=list(d["next_step_queries"]),
            search_log=[
                SearchLogEntry(query=e["query"], hit_keys=list(e["hit_keys"]), used=e["used"])
                for e in d["search_log"]
            ],
            unsupported_statements=list(d.get("unsupported_statements", [])),
            violations=list(d.get("violations", [])),
            skipped_queries=list(d.get("skipped_queries", [])),
            budget_exhausted=d.get("budget_exhausted", False),
        )


@dataclass
class JudgeVerdict:
    thread_id: int
    relevance_score: int | None
    coverage_score: int | None
    passed: bool
    rationale: str
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "thread_id": self.thread_id,
            "relevance_score": self.relevance_score,
            "coverage_score": self.coverage_score,
            "pass": self.passed,
            "rationale": self.rationale,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JudgeVerdict":
        return cls(
            thread_id=d["thread_id"],
            relevance_score=d["relevance_score"],
            coverage_score=d["coverage_score"],
            passed=d["pass"],
            rationale=d["rationale"],
            error=d.get("error"),
        )


@dataclass
class ExecutiveBrief:
    summary_sections: list[tuple[str, str]]
    aggregated_next_steps: list[str]
    included_threads: list[int]
    excluded_threads: list[dict]
    citation_keys_used: list[str]
    status: str = "ok"  # ok | empty_no_passing_reports
    violations: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "summary_sections": [
                {"heading": h, "text": t} for h, t in self.summary_sections
            ],
            "aggregated_next_steps": self.aggregated_next_steps,
            "included_threads": self.included_threads,
            "excluded_threads": self.excluded_threads,
            "citation_keys_used": self.citation_keys_used,
            "violations": self.violations,
        }


@dataclass
class SearchTool:
    """Stage-3 retrieval tool: immutable index shared by all threads."""

    index: VectorIndex
    client: EmbeddingClient
    chunk_store: ChunkStore
    k: int = 8
    min_score: float | None = None

    def run(self, query: str) -> list[SearchHit]:
        hits = search(self.index, query, self.k, self.client, self.chunk_store)
        if self.min_score is not None:
            hits = [h for h in hits if h.score >= self.min_score]
        return hits


# -- markdown grammar ----------------------------------------------------

def split_sections(text: str) -> tuple[str, list[tuple[str, str]]]:
    """Split Markdown into (preamble, [(heading, body), ...]) on ## headings."""
    matches = list(_HEADING_RE.finditer(text))
    if not matches:
        return text.strip(), []
    preamble = text[: matches[0].start()].strip()
    sections = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        sections.append((m.group(1).strip(), text[m.end() : end].strip()))
    return preamble, sections


def bullets(body: str) -> list[str]:
    out = []
    for line in body.split("\n"):
        m = _BULLET_RE.match(line)
        if m:
            out.append(m.group(1))
    return out


def _norm_heading(heading: str) -> str:
    return re.sub(r"[^a-z ]", "", heading.lower()).strip()


def _clean_claim(text: str) -> str:
    return " ".join(CITATION_RE.sub("", text).split()).strip()


def strip_keys_from_text(text: str, bad_keys: set[str]) -> str:
    """Remove bracketed occurrences of the given keys, tidying whitespace."""

    def repl(m: re.Match) -> str:
        return "" if f"{m.group(1)}:{m.group(2)}" in bad_keys else m.group(0)

    out = CITATION_RE.sub(repl, text)
    out = re.sub(r"[ \t]+\n", "\n", re.sub(r"[ \t]{2,}", " ", out))
    return out.strip() if out.strip() else out.strip()


# -- stage 1: corpus synopsis --------------------------------------------

_SNIPPET_STEPS = (240, 120, 60, 0)


def _doc_listing(manifest: CorpusManifest, snippet_chars: int) -> tuple[str, int]:
    lines = []
    truncated = 0
    for doc in manifest.documents:
        snippet = doc["snippet"][:snippet_chars].strip()
        if len(doc["snippet"]) > snippet_chars:
            truncated += 1
        if snippet:
            lines.append(f"- [{doc['doc_id']}] {doc['title']} — {snippet}")
        else:
            lines.append(f"- [{doc['doc_id']}] {doc['title']}")
    return "\n".join(lines), truncated


def synopsize(manifest: CorpusManifest, gw: ChatGateway) -> CorpusSynopsis:
    """Stage 1: outline topics, recurring themes, and gaps from document
    headers and snippets. Inputs that would overflow the context window are
    truncated per-document, and the truncation is recorded in the artifact."""
    if not manifest.documents:
        raise ValueError("manifest has no documents")

    prompt = None
    snippet_chars = _SNIPPET_STEPS[0]
    truncated = 0
    for step in _SNIPPET_STEPS:
        listing, truncated = _doc_listing(manifest, step)
        candidate = prompts.SYNOPSIS.format(
            corpus_name=manifest.corpus_name,
            doc_count=len(manifest.documents),
            doc_listing=listing,
        )
        if estimate_tokens(candidate) + gw.cfg.max_output_tokens <= gw.cfg.context_window_tokens:
            prompt, snippet_chars = candidate, step
            break
    if prompt is None:
        raise ContextOverflow(
            "synopsis inputs exceed the context window even at headers-only"
        )

    raw = gw.complete(prompt, stage="synopsis")
    _, sections = split_sections(raw)
    by_heading = {_norm_heading(h): bullets(b) for h, b in sections}
    topics = by_heading.get("topics", [])
    if not topics:
        raise ValueError("synopsis response has no '## Topics' bullets")
    return CorpusSynopsis(
        topics=topics,
        recurring_themes=by_heading.get("recurring themes", []),
        gaps=by_heading.get("gaps", []),
        source_manifest={
            "corpus_name": manifest.corpus_name,
            "doc_count": len(manifest.documents),
        },
        truncated_docs=truncated,
        snippet_chars=snippet_chars,
        raw_markdown=raw,
    )


# -- stage 2: search planning ---------------------------------------------

def plan_search(synopsis: CorpusSynopsis, gw: ChatGateway) -> SearchPlan:
    """Stage 2: propose 5-7 independent threads with objectives,
    sub-objectives, and candidate queries (validated, one repair attempt)."""
    prompt = prompts.PLAN.format(synopsis=synopsis.raw_markdown)
    result = gw.complete_structured(prompt, SEARCH_PLAN, stage="plan")
    threads = sorted(
        (SearchThread.from_dict(t) for t in result.data["threads"]),
        key=lambda t: t.thread_id,
    )
    digest = hashlib.sha256(synopsis.raw_markdown.encode("utf-8")).hexdigest()
    return SearchPlan(threads=threads, synopsis_digest=digest)


# -- stage 3: thread execution ---------------------------------------------

_PASSAGE_STEPS = (1200, 600, 300, 150)


def _parse_thread_response(text: str) -> tuple[str, list[Finding], list[str], list[str], list[str]]:
    preamble, sections = split_sections(text)
    narrative = ""
    findings: list[Finding] = []
    unsupported: list[str] = []
    open_questions: list[str] = []
    next_steps: list[str] = []
    for heading, body in sections:
        name = _norm_heading(heading)
        if name == "narrative":
            narrative = body
        elif name == "findings":
            for b in bullets(body):
                keys = []
                for ref in extract_citations(b):
                    if ref.key not in keys:
                        keys.append(ref.key)
                claim = _clean_claim(b)
                if keys:
                    findings.append(Finding(claim=claim, keys=keys))
                elif claim:
                    unsupported.append(claim)
        elif name == "open questions":
            open_questions = bullets(body)
        elif name in ("nextstep queries", "next step queries", "next steps", "next steps queries"):
            next_steps = bullets(body)
    if not narrative:
        narrative = re.sub(r"^#.*$", "", preamble, flags=re.MULTILINE).strip()
    return narrative, findings, open_questions, next_steps, unsupported


def execute_thread(
    thread: SearchThread,
    tool: SearchTool,
    gw: ChatGateway,
    budget: ThreadBudget | None = None,
    report_temperature: float = 0.7,
) -> ThreadReport:
    """Stage 3: run one thread in isolation over the semantic index.

    Every issued query is logged, zero-hit queries included. Candidate
    queries beyond the search budget are skipped and recorded, and the
    report is flagged budget-exhausted rather than failed. The citation
    firewall then guarantees cited keys are a subset of retrieved keys:
    regenerate once, then strip offending keys/claims and log each strip.
    """
    budget = budget or ThreadBudget()
    queries = thread.candidate_queries[: budget.max_search_calls]
    skipped = thread.candidate_queries[budget.max_search_calls :]

    search_log: list[SearchLogEntry] = []
    passages: dict[str, str] = {}
    for query in queries:
        hits = tool.run(query)
        search_log.append(SearchLogEntry(query=query, hit_keys=[h.key for h in hits]))
        for h in hits:
            passages.setdefault(h.key, h.snippet)

    retrieved = set(passages)
    sub_objectives = "\n".join(f"- {s}" for s in thread.sub_objectives)

    prompt = None
    for cap in _PASSAGE_STEPS:
        block = "\n\n".join(f"[{k}]\n{snip[:cap]}" for k, snip in passages.items())
        if not passages:
            block = "(no passages retrieved)"
        candidate = prompts.THREAD.format(
            objective=thread.objective,
            sub_objectives=sub_objectives,
            passages=block,
        )
        if estimate_tokens(candidate) + gw.cfg.max_output_tokens <= gw.cfg.context_window_tokens:
            prompt = candidate
            break
    if prompt is None:
        raise ContextOverflow(f"thread {thread.thread_id} passages exceed the context window")

    violations: list[dict] = []
    turns = 0
    response = gw.complete(prompt, stage="thread", temperature=report_temperature)
    turns += 1

    cited = {ref.key for ref in extract_citations(response)}
    bad = cited - retrieved
    if bad and turns < budget.max_model_turns:
        for key in sorted(bad):
            violations.append(
                {"kind": "unretrieved_citation", "key": key, "action": "regenerated"}
            )
        repair = prompts.THREAD_REPAIR.format(
            original=prompt,
            bad_keys=", ".join(sorted(bad)),
            allowed_keys=", ".join(sorted(retrieved)) or "(none)",
        )
        response = gw.complete(repair, stage="thread", temperature=report_temperature)
        turns += 1
        cited = {ref.key for ref in extract_citations(response)}
        bad = cited - retrieved

    narrative, findings, open_questions, next_steps, unsupported = _parse_thread_response(response)

    if bad:
        narrative = strip_keys_from_text(narrative, bad)
        kept: list[Finding] = []
        for f in findings:
            good_keys = [k for k in f.keys if k not in bad]
            if good_keys:
                kept.append(Finding(claim=f.claim, keys=good_keys))
            else:
                violations.append(
                    {"kind": "claim_stripped", "claim": f.claim, "action": "stripped"}
                )
        findings = kept
        open_questions = [strip_keys_from_text(q, bad) for q in open_questions]
        next_steps = [strip_keys_from_text(q, bad) for q in next_steps]
        for key in sorted(bad):
            violations.append(
                {"kind": "unretrieved_citation", "key": key, "action": "stripped"}
            )

    for stmt in unsupported:
        violations.append(
            {"kind": "finding_without_citation", "claim": stmt, "action": "excluded_from_findings"}
        )

    report = ThreadReport(
        thread_id=thread.thread_id,
        narrative=narrative,
        findings=findings,
        open_questions=open_questions,
        next_step_queries=next_steps,
        search_log=search_log,
        unsupported_statements=unsupported,
        violations=violations,
        skipped_queries=skipped,
        budget_exhausted=bool(skipped),
    )
    final_cited = set(report.cited_keys())
    for entry in report.search_log:
        entry.used = any(k in final_cited for k in entry.hit_keys)
    return report


def render_thread_report_md(report: ThreadReport, thread: SearchThread) -> str:
    """Canonical Markdown artifact for one thread report."""
    lines = [f"# Thread {report.thread_id}: {thread.objective}", ""]
    lines += ["## Narrative", report.narrative or "(empty)", ""]
    lines.append("## Findings")
    if report.findings:
        for f in report.findings:
            keys = " ".join(f"[{k}]" for k in f.keys)
            lines.append(f"- {f.claim} {keys}")
    else:
        lines.append("(no supported findings)")
    lines.append("")
    lines.append("## Open Questions")
    lines += [f"- {q}" for q in report.open_questions] or ["(none)"]
    lines.append("")
    lines.append("## Next-Step Queries")
    lines += [f"- {q}" for q in report.next_step_queries] or ["(none)"]
    lines.append("")
    if report.unsupported_statements:
        lines.append("## Unsupported Statements")
        lines += [f"- {s}" for s in report.unsupported_statements]
        lines.append("")
    lines.append("## Search Log")
    for e in report.search_log:
        status = "used" if e.used else "unused"
        hits = ", ".join(e.hit_keys) if e.hit_keys else "no hits"
        lines.append(f'- "{e.query}" -> {hits} ({status})')
    for q in report.skipped_queries:
        lines.append(f'- "{q}" -> skipped (search budget exhausted)')
    return "\n".join(lines) + "\n"


# -- stage 4: judge gating --------------------------------------------------

def judge_report(
    report: ThreadReport,
    thread: SearchThread,
    gw: ChatGateway,
    min_relevance: int = 3,
    min_coverage: int = 3,
) -> JudgeVerdict:
    """Stage 4: score relevance and coverage; deterministic pass rule."""
    prompt = prompts.JUDGE.format(
        objective=thread.objective,
        sub_objectives="\n".join(f"- {s}" for s in thread.sub_objectives),
        report=render_thread_report_md(report, thread),
    )
    result = gw.complete_structured(prompt, JUDGE_VERDICT, stage="judge")
    relevance = result.data["relevance_score"]
    coverage = result.data["coverage_score"]
    return JudgeVerdict(
        thread_id=report.thread_id,
        relevance_score=relevance,
        coverage_score=coverage,
        passed=relevance >= min_relevance and coverage >= min_coverage,
        rationale=result.data["rationale"],
    )


# -- stage 5: synthesis ------------------------------------------------------

def _dedupe_exact(items: list[str]) -> list[str]:
    seen = set()
    out = []
    for item in items:
        norm = " ".join(item.casefold().split())
        if norm and norm not in seen:
            seen.add(norm)
            out.append(item)
    return out


def synthesize(
    passing_reports: list[ThreadReport],
    gw: ChatGateway,
    report_temperature: float = 0.7,
) -> ExecutiveBrief:
    """Stage 5: merge passing reports into an executive brief. Findings are
    de-duplicated exact-match on normalized claim text before prompting;
    semantic de-duplication is the model's job. The firewall rejects keys
    not cited by any passing report (regenerate once, then strip and log)."""
    if not passing_reports:
        raise NoPassingReports("no thread report passed the judge gate")

    allowed: set[str] = set()
    for r in passing_reports:
        allowed.update(r.cited_keys())

    seen_claims: set[str] = set()
    finding_lines: list[str] = []
    for r in sorted(passing_reports, key=lambda r: r.thread_id):
        for f in r.findings:
            norm = " ".join(f.claim.casefold().split())
            if norm in seen_claims:
                continue
            seen_claims.add(norm)
            keys = " ".join(f"[{k}]" for k in f.keys)
            finding_lines.append(f"- {f.claim} {keys}")

    open_qs = _dedupe_exact([q for r in passing_reports for q in r.open_questions])
    next_steps = _dedupe_exact([q for r in passing_reports for q in r.next_step_queries])

    prompt = prompts.SYNTHESIS.format(
        findings="\n".join(finding_lines) or "(none)",
        open_questions="\n".join(f"- {q}" for q in open_qs) or "(none)",
        next_steps="\n".join(f"- {q}" for q in next_steps) or "(none)",
    )

    violations: list[dict] = []
    response = gw.complete(prompt, stage="synthesis", temperature=report_temperature)
    cited = {ref.key for ref in extract_citations(response)}
    bad = cited - allowed
    if bad:
        for key in sorted(bad):
            violations.append({"kind": "novel_citation", "key": key, "action": "regenerated"})
        repair = prompts.SYNTHESIS_REPAIR.format(
            original=prompt,
            bad_keys=", ".join(sorted(bad)),
            allowed_keys=", ".join(sorted(allowed)) or "(none)",
        )
        response = gw.complete(repair, stage="synthesis", temperature=report_temperature)
        cited = {ref.key for ref in extract_citations(response)}
        bad = cited - allowed
    if bad:
        response = strip_keys_from_text(response, bad)
        for key in sorted(bad):
            violations.append({"kind": "novel_citation", "key": key, "action": "stripped"})

    _, sections = split_sections(response)
    summary_sections: list[tuple[str, str]] = []
    aggregated: list[str] = []
    for heading, body in sections:
        if _norm_heading(heading) in ("next steps", "aggregated next steps"):
            aggregated = bullets(body)
        else:
            summary_sections.append((heading, body))

    used: list[str] = []
    for h, t in summary_sections:
        for ref in extract_citations(t):
            if ref.key not in used:
                used.append(ref.key)

    return ExecutiveBrief(
        summary_sections=summary_sections,
        aggregated_next_steps=aggregated,
        included_threads=sorted(r.thread_id for r in passing_reports),
        excluded_threads=[],
        citation_keys_used=used,
        violations=violations,
    )


def render_brief_md(brief: ExecutiveBrief) -> str:
    lines = ["# Executive Brief", ""]
    if brief.status == "empty_no_passing_reports":
        lines += [
            "No thread report passed the judge gate; there is nothing to synthesize.",
            "",
        ]
    for heading, text in brief.summary_sections:
        lines += [f"## {heading}", text, ""]
    lines.append("## Next Steps")
    lines += [f"- {q}" for q in brief.aggregated_next_steps] or ["(none)"]
    lines.append("")
    lines.append("## Provenance")
    included = ", ".join(str(t) for t in brief.included_threads) or "none"
    lines.append(f"Included threads: {included}")
    for ex in brief.excluded_threads:
        lines.append(
            f"Excluded thread {ex['thread_id']}: relevance={ex['relevance_score']}, "
            f"coverage={ex['coverage_score']} — {ex['rationale']}"
        )
    return "\n".join(lines) + "\n"


# -- run orchestration --------------------------------------------------------

def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


class _RunLock:
    """Single pipeline instance per run directory."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / ".veridex.lock"

    def __enter__(self):
        if self.path.exists():
            raise RunLocked(f"run directory is locked by {self.path.read_text().strip()}")
        self.path.write_text(str(os.getpid()), encoding="utf-8")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


@dataclass
class RunResult:
    run_dir: Path
    status: str
    failed_stage: str | None
    synopsis: CorpusSynopsis | None = None
    plan: SearchPlan | None = None
    reports: dict[int, ThreadReport] = field(default_factory=dict)
    failed_threads: dict[int, str] = field(default_factory=dict)
    verdicts: dict[int, JudgeVerdict] = field(default_factory=dict)
    brief: ExecutiveBrief | None = None
    timings_ms: dict[str, int] = field(default_factory=dict)


class _ViolationSink:
    def __init__(self, path: Path):
        self.path = path
        self.count = 0

    def extend(self, stage: str, thread_id: int | None, violations: list[dict]) -> None:
        if not violations:
            return
        with open(self.path, "a", encoding="utf-8") as fh:
            for v in violations:
                fh.write(
                    json.dumps({"stage": stage, "thread_id": thread_id, **v}, ensure_ascii=False)
                    + "\n"
                )
        self.count += len(violations)


def run_pipeline(cfg: RunConfig, progress=None) -> RunResult:
    """Execute the five stages end-to-end over an ingested, indexed run
    directory. Any stage abort leaves prior artifacts intact and writes a
    failure marker naming the stage into run.json. ``progress(stage, ms)``
    is called as each stage completes."""
    run_dir = cfg.run_dir
    manifest_path = run_dir / "manifest.json"
    chunks_path = run_dir / "chunks.jsonl"
    index_path = run_dir / "index.jsonl"
    for p, what in ((manifest_path, "manifest"), (chunks_path, "chunks"), (index_path, "index")):
        if not p.exists():
            raise StageFailure("preflight", f"{what} missing: run ingest/index first ({p})")

    started_at = datetime.now(timezone.utc).isoformat()
    t_run = time.monotonic()
    result = RunResult(run_dir=run_dir, status="running", failed_stage=None)
    stop_after = cfg.stages_through
    if stop_after not in STAGE_ORDER:
        raise ValueError(f"stages_through must be one of {STAGE_ORDER}")

    manifest = read_manifest(manifest_path)
    chunk_store = ChunkStore(read_chunks(chunks_path))
    index = VectorIndex.load(index_path)
    if index.embedder_id.rsplit("@", 1)[0] != cfg.embedder.model:
        raise StageFailure(
            "preflight",
            f"index embedder {index.embedder_id!r} does not match configured model "
            f"{cfg.embedder.model!r}",
        )

    audit_log = AuditLog(run_dir / "exchanges.jsonl")
    gw = ChatGateway(cfg.model, audit_log)
    client = EmbeddingClient(cfg.embedder)
    tool = SearchTool(
        index=index, client=client, chunk_store=chunk_store, k=cfg.k, min_score=cfg.min_score
    )
    sink = _ViolationSink(run_dir / "violations.jsonl")

    def finish(status: str, failed_stage: str | None = None, error: str | None = None) -> None:
        run_record = {
            "schema_version": 1,
            "status": status,
            "failed_stage": failed_stage,
            "error": error,
            "corpus_name": manifest.corpus_name,
            "config": cfg.snapshot(),
            "embedder_id": index.embedder_id,
            "started_at": started_at,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "total_ms": int((time.monotonic() - t_run) * 1000),
            "stage_timings_ms": result.timings_ms,
            "exchanges": audit_log.entries,
            "violations": sink.count,
            "thread_count": len(result.reports) + len(result.failed_threads),
            "failed_threads": {str(k): v for k, v in result.failed_threads.items()},
        }
        _write_json(run_dir / "run.json", run_record)
        result.status = status
        result.failed_stage = failed_stage

    with _RunLock(run_dir):
        # stage 1: synopsis
        t0 = time.monotonic()
        try:
            synopsis = synopsize(manifest, gw)
        except (VeridexError, ValueError) as exc:
            finish("failed", "synopsis", str(exc))
            raise StageFailure("synopsis", exc) from exc
        result.timings_ms["synopsis"] = int((time.monotonic() - t0) * 1000)
        if progress:
            progress("synopsis", result.timings_ms["synopsis"])
        result.synopsis = synopsis
        _write_text(run_dir / "synopsis.md", synopsis.raw_markdown + "\n")
        _write_json(run_dir / "synopsis.json", synopsis.to_dict())
        if stop_after == "synopsis":
            finish("completed")
            return result

        # stage 2: plan
        t0 = time.monotonic()
        try:
            plan = plan_search(synopsis, gw)
        except VeridexError as exc:
            finish("failed", "plan", str(exc))
            raise StageFailure("plan", exc) from exc
        result.timings_ms["plan"] = int((time.monotonic() - t0) * 1000)
        if progress:
            progress("plan", result.timings_ms["plan"])
        result.plan = plan
        _write_json(run_dir / "plan.json", plan.to_dict())
        _write_text(run_dir / "plan.md", render_plan_md(plan))
        if stop_after == "plan":
            finish("completed")
            return result

        # stage 3: threads (isolated; a thread failure does not stop siblings)
        threads_dir = run_dir / "threads"
        threads_dir.mkdir(exist_ok=True)
        t0 = time.monotonic()
        for thread in plan.threads:
            try:
                report = execute_thread(
                    thread, tool, gw, cfg.budget, report_temperature=cfg.report_temperature
                )
            except VeridexError as exc:
                result.failed_threads[thread.thread_id] = str(exc)
                _write_json(
                    threads_dir / f"thread_{thread.thread_id}.json",
                    {"thread_id": thread.thread_id, "status": "failed", "error": str(exc)},
                )
                continue
            result.reports[thread.thread_id] = report
            sink.extend("thread", thread.thread_id, report.violations)
            payload = report.to_dict()
            payload["thread"] = thread.to_dict()
            _write_json(threads_dir / f"thread_{thread.thread_id}.json", payload)
            _write_text(
                threads_dir / f"thread_{thread.thread_id}.md",
                render_thread_report_md(report, thread),
            )
        result.timings_ms["threads"] = int((time.monotonic() - t0) * 1000)
        if progress:
            progress("threads", result.timings_ms["threads"])
        if not result.reports:
            finish("failed", "threads", "every thread failed")
            raise StageFailure("threads", "every thread failed")
        if stop_after == "threads":
            finish("completed")
            return result

        # stage 4: judge gate
        verdicts_dir = run_dir / "verdicts"
        verdicts_dir.mkdir(exist_ok=True)
        t0 = time.monotonic()
        for thread in plan.threads:
            report = result.reports.get(thread.thread_id)
            if report is None:
                continue
            try:
                verdict = judge_report(
                    report, thread, gw, cfg.judge_min_relevance, cfg.judge_min_coverage
                )
            except SchemaViolation as exc:
                # conservative: unparseable judgment excludes the thread
                verdict = JudgeVerdict(
                    thread_id=thread.thread_id,
                    relevance_score=None,
                    coverage_score=None,
                    passed=False,
                    rationale="failed-judgment",
                    error=str(exc),
                )
            except VeridexError as exc:
                finish("failed", "judge", str(exc))
                raise StageFailure("judge", exc) from exc
            result.verdicts[thread.thread_id] = verdict
            _write_json(verdicts_dir / f"verdict_{thread.thread_id}.json", verdict.to_dict())
        result.timings_ms["judge"] = int((time.monotonic() - t0) * 1000)
        if progress:
            progress("judge", result.timings_ms["judge"])
        if stop_after == "judge":
            finish("completed")
            return result

        # stage 5: synthesis
        passing = [
            result.reports[tid]
            for tid in sorted(result.verdicts)
            if result.verdicts[tid].passed
        ]
        excluded = [
            {
                "thread_id": v.thread_id,
                "relevance_score": v.relevance_score,
                "coverage_score": v.coverage_score,
                "rationale": v.rationale,
            }
            for v in result.verdicts.values()
            if not v.passed
        ]
        t0 = time.monotonic()
        try:
            brief = synthesize(passing, gw, report_temperature=cfg.report_temperature)
        except NoPassingReports:
            brief = ExecutiveBrief(
                summary_sections=[],
                aggregated_next_steps=[],
                included_threads=[],
                excluded_threads=excluded,
                citation_keys_used=[],
                status="empty_no_passing_reports",
            )
        except VeridexError as exc:
            finish("failed", "synthesis", str(exc))
            raise StageFailure("synthesis", exc) from exc
        brief.excluded_threads = excluded
        result.timings_ms["synthesis"] = int((time.monotonic() - t0) * 1000)
        if progress:
            progress("synthesis", result.timings_ms["synthesis"])
        result.brief = brief
        sink.extend("synthesis", None, brief.violations)
        _write_json(run_dir / "brief.json", brief.to_dict())
        _write_text(run_dir / "brief.md", render_brief_md(brief))

        finish("completed")
    return result


def render_plan_md(plan: SearchPlan) -> str:
    lines = ["# Search Plan", "", f"Synopsis digest: {plan.synopsis_digest}", ""]
    for t in plan.threads:
        lines.append(f"## Thread {t.thread_id}: {t.objective}")
        lines.append("Sub-objectives:")
        lines += [f"- {s}" for s in t.sub_objectives]
        lines.append("Candidate queries:")
        lines += [f"- {q}" for q in t.candidate_queries]
        lines.append("")
    return "\n".join(lines) + "\n"
