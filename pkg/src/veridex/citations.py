"""Citation key parsing, resolution, and artifact auditing.

The claim -> chunk audit chain: bracketed keys like ``[7db3cb:0]`` are
extracted lexically, resolved against the corpus manifest, and summarized
into per-artifact audit tables. Resolution is pure and total; failure is
encoded in the status, never raised.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ingest import ChunkStore, CorpusManifest

CITATION_RE = re.compile(r"\[([0-9a-f]{6,8}):([0-9]+)\]")

VALID = "valid"
UNKNOWN_DOC = "unknown_doc"
BAD_INDEX = "bad_index"


@dataclass(frozen=True)
class CitationRef:
    doc_id: str
    chunk_index: int
    source_offset: int

    @property
    def key(self) -> str:
        return f"{self.doc_id}:{self.chunk_index}"


@dataclass(frozen=True)
class ResolutionResult:
    ref: CitationRef
    status: str
    passage: str | None = None


def extract_citations(text: str) -> list[CitationRef]:
    """Scan for every bracketed citation key, in order, with offsets.
    Duplicates are preserved; non-matching bracket content is ignored."""
    return [
        CitationRef(doc_id=m.group(1), chunk_index=int(m.group(2)), source_offset=m.start())
        for m in CITATION_RE.finditer(text)
    ]


def parse_key(key: str) -> CitationRef | None:
    """Parse a bare (unbracketed) key like ``7db3cb:0``; None if malformed."""
    m = CITATION_RE.fullmatch(f"[{key}]")
    if not m:
        return None
    return CitationRef(doc_id=m.group(1), chunk_index=int(m.group(2)), source_offset=0)


def resolve(
    ref: CitationRef, manifest: CorpusManifest, chunk_store: ChunkStore
) -> ResolutionResult:
    """Resolve one ref to its exact source passage, or a failure status."""
    count = manifest.chunk_count_by_doc.get(ref.doc_id)
    if count is None:
        return ResolutionResult(ref=ref, status=UNKNOWN_DOC)
    if not 0 <= ref.chunk_index < count:
        return ResolutionResult(ref=ref, status=BAD_INDEX)
    text = chunk_store.get_text(ref.doc_id, ref.chunk_index)
    if text is None:
        # manifest and chunk store disagree; treat as unresolvable
        return ResolutionResult(ref=ref, status=BAD_INDEX)
    return ResolutionResult(ref=ref, status=VALID, passage=text)


@dataclass
class AuditTable:
    """Per-ref resolution statuses plus summary counts for one artifact."""

    results: list[ResolutionResult]

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def valid(self) -> int:
        return sum(1 for r in self.results if r.status == VALID)

    @property
    def invalid(self) -> int:
        return self.total - self.valid

    @property
    def invalid_rate(self) -> float:
        """invalid / total; 0.0 when the artifact has no citations."""
        return self.invalid / self.total if self.total else 0.0

    @property
    def no_citations(self) -> bool:
        return self.total == 0

    def invalid_keys(self) -> set[str]:
        return {r.ref.key for r in self.results if r.status != VALID}

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "valid": self.valid,
            "invalid": self.invalid,
            "invalid_rate": self.invalid_rate,
            "no_citations": self.no_citations,
            "refs": [
                {
                    "key": r.ref.key,
                    "offset": r.ref.source_offset,
                    "status": r.status,
                }
                for r in self.results
            ],
        }

    def to_markdown(self) -> str:
        lines = ["| key | offset | status |", "|---|---|---|"]
        for r in self.results:
            lines.append(f"| {r.ref.key} | {r.ref.source_offset} | {r.status} |")
        if self.no_citations:
            summary = "no citations"
        else:
            summary = f"{self.valid}/{self.total} valid, invalid rate {self.invalid_rate:.2f}"
        lines += ["", f"**Summary:** {summary}"]
        return "\n".join(lines) + "\n"


def audit_artifact(
    text: str, manifest: CorpusManifest, chunk_store: ChunkStore
) -> AuditTable:
    """Resolve every citation in an artifact's text.

    Each rendered citation counts once per occurrence in the rate
    denominator.
    """
    return AuditTable(results=[resolve(ref, manifest, chunk_store) for ref in extract_citations(text)])
