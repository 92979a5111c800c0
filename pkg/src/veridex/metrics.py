"""Claim-level metrics over human annotations plus machine citation audits.

Four headline metrics per run, each averaged across thread reports with
equal weight (the brief is excluded from the averages; it is covered by
the synthesis-delta counts instead):

  claim support rate    supported / (supported + unsupported) per report.
                        Honest "no relevant documents" statements are
                        annotated no_evidence_flagged and excluded from the
                        denominator: they are neither rewarded as supported
                        claims nor punished as hallucinations.
  hallucination severity index (HSI)
                        sum of severity weights (minor=1, major=2,
                        critical=3) over all hallucinated claims, divided
                        by the number of reports. Lower is better.
  invalid citation rate invalid / total citations per report, averaged;
                        purely machine-computed from artifacts.
  plan adherence        (satisfied_with_evidence +
                        concluded_unsupported_with_documented_attempts)
                        / planned sub-objectives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .citations import AuditTable, audit_artifact
from .errors import CoverageGap, EmptyReport, EmptyRun
from .ingest import ChunkStore, CorpusManifest
from .pipeline import SearchPlan

BRIEF_REPORT_ID = "brief"

SUPPORTED = "supported"
UNSUPPORTED = "unsupported"
NO_EVIDENCE_FLAGGED = "no_evidence_flagged"
SUPPORT_STATUSES = (SUPPORTED, UNSUPPORTED, NO_EVIDENCE_FLAGGED)

SEVERITY_WEIGHTS = {"none": 0, "minor": 1, "major": 2, "critical": 3}

SATISFIED = "satisfied_with_evidence"
CONCLUDED_UNSUPPORTED = "concluded_unsupported_with_documented_attempts"
UNADDRESSED = "unaddressed"
OUTCOMES = (SATISFIED, CONCLUDED_UNSUPPORTED, UNADDRESSED)


@dataclass
class ClaimAnnotation:
    """One human verdict on one atomic claim.

    severity is none exactly when the claim is supported or is an honest
    no-evidence statement; unsupported claims carry minor/major/critical.
    Brief claims record antecedent links ("report_id:claim_id") to the
    thread claims they merge; unlinked brief claims are treated as new
    material by the synthesis delta.
    """

    report_id: str
    claim_id: int
    claim_text: str
    support_status: str
    citation_keys: list[str] = field(default_factory=list)
    citation_valid: dict[str, bool] = field(default_factory=dict)
    hallucination_severity: str = "none"
    antecedents: list[str] = field(default_factory=list)
    version: int = 1

    def validate(self) -> None:
        if self.support_status not in SUPPORT_STATUSES:
            raise ValueError(f"bad support_status {self.support_status!r}")
        if self.hallucination_severity not in SEVERITY_WEIGHTS:
            raise ValueError(f"bad hallucination_severity {self.hallucination_severity!r}")
        if self.support_status == SUPPORTED and not self.citation_keys:
            raise ValueError("supported claims need at least one citation key")
        severity_none = self.hallucination_severity == "none"
        if self.support_status == UNSUPPORTED and severity_none:
            raise ValueError("unsupported claims carry a hallucination severity")
        if self.support_status != UNSUPPORTED and not severity_none:
            raise ValueError("only unsupported claims carry a hallucination severity")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "claim",
            "report_id": self.report_id,
            "claim_id": self.claim_id,
            "claim_text": self.claim_text,
            "support_status": self.support_status,
            "citation_keys": self.citation_keys,
            "citation_valid": self.citation_valid,
            "hallucination_severity": self.hallucination_severity,
            "antecedents": self.antecedents,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClaimAnnotation":
        ann = cls(
            report_id=str(d["report_id"]),
            claim_id=int(d["claim_id"]),
            claim_text=d.get("claim_text", ""),
            support_status=d["support_status"],
            citation_keys=list(d.get("citation_keys", [])),
            citation_valid=dict(d.get("citation_valid", {})),
            hallucination_severity=d.get("hallucination_severity", "none"),
            antecedents=list(d.get("antecedents", [])),
            version=int(d.get("version", 1)),
        )
        ann.validate()
        return ann


@dataclass
class SubObjectiveOutcome:
    thread_id: int
    sub_objective_index: int
    outcome: str
    version: int = 1

    def validate(self) -> None:
        if self.outcome not in OUTCOMES:
            raise ValueError(f"bad outcome {self.outcome!r}")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "sub_objective",
            "thread_id": self.thread_id,
            "sub_objective_index": self.sub_objective_index,
            "outcome": self.outcome,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubObjectiveOutcome":
        out = cls(
            thread_id=int(d["thread_id"]),
            sub_objective_index=int(d["sub_objective_index"]),
            outcome=d["outcome"],
            version=int(d.get("version", 1)),
        )
        out.validate()
        return out


@dataclass
class AnnotationSet:
    claims: list[ClaimAnnotation] = field(default_factory=list)
    outcomes: list[SubObjectiveOutcome] = field(default_factory=list)
    segmentations: list[dict] = field(default_factory=list)

    def claims_for(self, report_id: str) -> list[ClaimAnnotation]:
        return [c for c in self.claims if c.report_id == report_id]

    def thread_claims(self) -> list[ClaimAnnotation]:
        return [c for c in self.claims if c.report_id != BRIEF_REPORT_ID]

    def annotated_report_ids(self) -> list[str]:
        seen: list[str] = []
        for c in self.thread_claims():
            if c.report_id not in seen:
                seen.append(c.report_id)
        return seen


def load_annotations(path: Path | str) -> AnnotationSet:
    """Read annotations.jsonl; for duplicate (kind, identity) records the
    last write wins, matching the serve API's conflict rule."""
    claims: dict[tuple[str, int], ClaimAnnotation] = {}
    outcomes: dict[tuple[int, int], SubObjectiveOutcome] = {}
    segmentations: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            kind = d.get("kind", "claim")
            if kind == "claim":
                ann = ClaimAnnotation.from_dict(d)
                claims[(ann.report_id, ann.claim_id)] = ann
            elif kind == "sub_objective":
                out = SubObjectiveOutcome.from_dict(d)
                outcomes[(out.thread_id, out.sub_objective_index)] = out
            elif kind == "segmentation":
                segmentations[str(d["report_id"])] = d
            else:
                raise ValueError(f"unknown annotation kind {kind!r}")
    return AnnotationSet(
        claims=list(claims.values()),
        outcomes=list(outcomes.values()),
        segmentations=list(segmentations.values()),
    )


def append_annotation(path: Path | str, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# -- the four metrics ------------------------------------------------------

def claim_support_rate(annotations: list[ClaimAnnotation]) -> float | None:
    """Supported share of one report's checkable claims; None when the
    report contains only no-evidence statements (excluded from averages)."""
    if not annotations:
        raise EmptyReport("no annotations for report")
    checkable = [a for a in annotations if a.support_status in (SUPPORTED, UNSUPPORTED)]
    if not checkable:
        return None
    supported = sum(1 for a in checkable if a.support_status == SUPPORTED)
    return supported / len(checkable)


def hallucination_severity_index(
    annotations_by_report: dict[str, list[ClaimAnnotation]]
) -> float:
    """Severity-weighted hallucination count averaged across reports."""
    if not annotations_by_report:
        raise EmptyRun("no annotated reports")
    points = sum(
        SEVERITY_WEIGHTS[a.hallucination_severity]
        for anns in annotations_by_report.values()
        for a in anns
    )
    return points / len(annotations_by_report)


def invalid_citation_rate(
    report_texts: dict[str, str],
    manifest: CorpusManifest,
    chunk_store: ChunkStore,
) -> tuple[float, dict[str, AuditTable]]:
    """Machine metric: audit each report's text, average the per-report
    invalid rates. Citation-free reports count as 0.0."""
    if not report_texts:
        raise EmptyRun("no reports to audit")
    audits = {rid: audit_artifact(text, manifest, chunk_store) for rid, text in report_texts.items()}
    run_rate = sum(a.invalid_rate for a in audits.values()) / len(audits)
    return run_rate, audits


def plan_adherence(plan: SearchPlan, outcomes: list[SubObjectiveOutcome]) -> float:
    """Fraction of planned sub-objectives either satisfied with evidence or
    explicitly concluded unsupported after documented attempts."""
    recorded = {(o.thread_id, o.sub_objective_index): o.outcome for o in outcomes}
    total = 0
    good = 0
    for thread in plan.threads:
        for idx in range(len(thread.sub_objectives)):
            outcome = recorded.get((thread.thread_id, idx))
            if outcome is None:
                raise CoverageGap(
                    f"no outcome recorded for thread {thread.thread_id} sub-objective {idx}"
                )
            total += 1
            if outcome in (SATISFIED, CONCLUDED_UNSUPPORTED):
                good += 1
    if total == 0:
        raise EmptyRun("plan has no sub-objectives")
    return good / total


@dataclass
class SynthesisDelta:
    """Problems introduced by the brief that have no antecedent in any
    thread report; pre-existing errors are not recounted."""

    new_unsupported: int
    new_invalid_citations: int
    new_hallucinations: int

    def to_dict(self) -> dict:
        return {
            "new_unsupported": self.new_unsupported,
            "new_invalid_citations": self.new_invalid_citations,
            "new_hallucinations": self.new_hallucinations,
        }


def synthesis_delta(
    brief_annotations: list[ClaimAnnotation],
    thread_annotations: list[ClaimAnnotation],
    audits: dict[str, AuditTable] | None = None,
) -> SynthesisDelta:
    """Count brief problems with no antecedent link to a thread claim.

    Invalid citations come from the artifact audits when given (key not
    already invalid in some thread report); otherwise from the annotator's
    per-key citation_valid flags.
    """
    unlinked = [a for a in brief_annotations if not a.antecedents]
    new_unsupported = sum(1 for a in unlinked if a.support_status == UNSUPPORTED)
    new_hallucinations = sum(1 for a in unlinked if a.hallucination_severity != "none")

    if audits is not None:
        thread_invalid: set[str] = set()
        for rid, table in audits.items():
            if rid != BRIEF_REPORT_ID:
                thread_invalid |= table.invalid_keys()
        brief_table = audits.get(BRIEF_REPORT_ID)
        new_invalid = (
            sum(1 for r in brief_table.results if r.status != "valid" and r.ref.key not in thread_invalid)
            if brief_table
            else 0
        )
    else:
        thread_invalid = {
            key
            for a in thread_annotations
            for key, ok in a.citation_valid.items()
            if not ok
        }
        new_invalid = sum(
            1
            for a in brief_annotations
            for key, ok in a.citation_valid.items()
            if not ok and key not in thread_invalid
        )

    return SynthesisDelta(
        new_unsupported=new_unsupported,
        new_invalid_citations=new_invalid,
        new_hallucinations=new_hallucinations,
    )


# -- aggregation and rendering ----------------------------------------------

@dataclass
class MetricsReport:
    claim_support: float | None
    hsi: float | None
    invalid_citation: float | None
    plan_adherence_rate: float | None
    per_report: dict[str, dict]
    delta: SynthesisDelta | None
    model: str = ""
    corpus: str = ""
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "model": self.model,
            "corpus": self.corpus,
            "claim_support_rate": self.claim_support,
            "hallucination_severity_index": self.hsi,
            "invalid_citation_rate": self.invalid_citation,
            "plan_adherence": self.plan_adherence_rate,
            "per_report": self.per_report,
            "synthesis_delta": self.delta.to_dict() if self.delta else None,
            "notes": self.notes,
        }


def compute_metrics(
    annotations: AnnotationSet,
    plan: SearchPlan | None,
    report_texts: dict[str, str],
    manifest: CorpusManifest,
    chunk_store: ChunkStore,
    model: str = "",
    corpus: str = "",
) -> MetricsReport:
    """Assemble the four headline metrics plus per-report detail.

    The invalid-citation rate needs artifacts only; the other three need
    annotations (claim verdicts, sub-objective outcomes) and are reported
    as None with a note when those are missing.
    """
    notes: list[str] = []
    thread_texts = {rid: t for rid, t in report_texts.items() if rid != BRIEF_REPORT_ID}
    run_invalid, audits = invalid_citation_rate(thread_texts, manifest, chunk_store)
    if BRIEF_REPORT_ID in report_texts:
        audits[BRIEF_REPORT_ID] = audit_artifact(
            report_texts[BRIEF_REPORT_ID], manifest, chunk_store
        )

    per_report: dict[str, dict] = {}
    for rid in sorted(thread_texts, key=lambda r: (len(r), r)):
        per_report[rid] = {"invalid_citation_rate": audits[rid].invalid_rate}

    by_report = {
        rid: annotations.claims_for(rid) for rid in annotations.annotated_report_ids()
    }
    support: float | None = None
    hsi: float | None = None
    if by_report:
        rates = []
        for rid, anns in by_report.items():
            rate = claim_support_rate(anns)
            points = sum(SEVERITY_WEIGHTS[a.hallucination_severity] for a in anns)
            per_report.setdefault(rid, {})
            per_report[rid]["claim_support_rate"] = rate
            per_report[rid]["hallucination_points"] = points
            per_report[rid]["claims"] = len(anns)
            if rate is not None:
                rates.append(rate)
        if rates:
            support = sum(rates) / len(rates)
        hsi = hallucination_severity_index(by_report)
    else:
        notes.append("no claim annotations: claim support and HSI unavailable")

    adherence: float | None = None
    if plan is not None and annotations.outcomes:
        adherence = plan_adherence(plan, annotations.outcomes)
    else:
        notes.append("no sub-objective outcomes: plan adherence unavailable")

    delta: SynthesisDelta | None = None
    brief_claims = annotations.claims_for(BRIEF_REPORT_ID)
    if brief_claims:
        delta = synthesis_delta(brief_claims, annotations.thread_claims(), audits)

    return MetricsReport(
        claim_support=support,
        hsi=hsi,
        invalid_citation=run_invalid,
        plan_adherence_rate=adherence,
        per_report=per_report,
        delta=delta,
        model=model,
        corpus=corpus,
        notes=notes,
    )


def _cell(value: float | None) -> str:
    return "--" if value is None else f"{value:.2f}"


COLUMNS = ("Claim Support", "Halluc. Index", "Invalid Citation", "Plan Adherence")


def _row_cells(m: MetricsReport | None) -> list[str]:
    if m is None:
        return ["--"] * 4
    return [
        _cell(m.claim_support),
        _cell(m.hsi),
        _cell(m.invalid_citation),
        _cell(m.plan_adherence_rate),
    ]


def emit_table(rows: list[tuple[str, str, MetricsReport | None]]) -> str:
    """Markdown table, one row per (model, corpus) run; missing runs render
    as -- cells. Cells are two-decimal."""
    if not rows:
        raise EmptyRun("no runs to tabulate")
    lines = [
        "| Model | Corpus | " + " | ".join(COLUMNS) + " |",
        "|---|---|" + "---|" * 4,
    ]
    for model, corpus, m in rows:
        lines.append(f"| {model} | {corpus} | " + " | ".join(_row_cells(m)) + " |")
    return "\n".join(lines) + "\n"


def emit_csv(rows: list[tuple[str, str, MetricsReport | None]]) -> str:
    if not rows:
        raise EmptyRun("no runs to tabulate")
    lines = ["model,corpus," + ",".join(c.lower().replace(" ", "_").replace(".", "") for c in COLUMNS)]
    for model, corpus, m in rows:
        lines.append(",".join([model, corpus] + _row_cells(m)))
    return "\n".join(lines) + "\n"
