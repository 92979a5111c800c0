"""Corpus loading, text normalization, deterministic chunking, and
content-hash identities.

Every citation key in the system bottoms out here: a document's id is the
first 6 hex chars of the SHA-256 of its canonical text, and chunks are
addressed positionally within the document.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import DuplicateDocId, EmptyCorpus, MalformedDocId

logger = logging.getLogger(__name__)

TEXT_SUFFIXES = {".txt", ".md"}
SNIPPET_CHARS = 240
TITLE_CHARS = 120

_DOC_ID_RE = re.compile(r"^[0-9a-f]{6}(?:[0-9a-f]{2})?$")
_PARA_BREAK_RE = re.compile(r"\n{2,}")

STRATEGIES = ("paragraph-first", "fixed-window")


def normalize_text(raw: str) -> str:
    """Canonicalize text for hashing: Unicode NFC, CRLF -> LF, trailing
    whitespace stripped per line. Idempotent."""
    import unicodedata

    text = unicodedata.normalize("NFC", raw.replace("\r\n", "\n"))
    return "\n".join(line.rstrip() for line in text.split("\n"))


def content_hash(canonical_text: str) -> str:
    """Full SHA-256 hex digest of the canonical text."""
    return hashlib.sha256(canonical_text.encode("utf-8")).hexdigest()


def citation_key(doc_id: str, chunk_index: int) -> str:
    """Render the resolvable key for one chunk, e.g. ``7db3cb:0``."""
    if not _DOC_ID_RE.match(doc_id):
        raise MalformedDocId(f"not a 6/8-char lowercase hex doc id: {doc_id!r}")
    if chunk_index < 0:
        raise ValueError(f"chunk_index must be >= 0, got {chunk_index}")
    return f"{doc_id}:{chunk_index}"


def render_citation(key: str) -> str:
    """Bracketed in-text form of a citation key."""
    return f"[{key}]"


@dataclass(frozen=True)
class ChunkingConfig:
    target_chunk_chars: int = 4096
    overlap_chars: int = 256
    split_strategy: str = "paragraph-first"

    def __post_init__(self):
        if self.target_chunk_chars <= 0:
            raise ValueError("target_chunk_chars must be positive")
        if not 0 <= self.overlap_chars < self.target_chunk_chars:
            raise ValueError("overlap_chars must be in [0, target_chunk_chars)")
        if self.split_strategy not in STRATEGIES:
            raise ValueError(f"split_strategy must be one of {STRATEGIES}")

    def to_dict(self) -> dict:
        return {
            "target_chunk_chars": self.target_chunk_chars,
            "overlap_chars": self.overlap_chars,
            "split_strategy": self.split_strategy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkingConfig":
        return cls(**d)


@dataclass(frozen=True)
class Document:
    doc_id: str
    source_path: str
    title: str
    canonical_text: str
    byte_length: int


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    chunk_index: int
    text: str
    char_span: tuple[int, int]

    @property
    def key(self) -> str:
        return citation_key(self.doc_id, self.chunk_index)


@dataclass
class CorpusManifest:
    """Registry that makes every citation key mechanically checkable:
    a key ``d:i`` resolves iff d is a known doc and i < its chunk count."""

    corpus_name: str
    documents: list[dict]  # {doc_id, title, snippet}
    chunk_count_by_doc: dict[str, int]
    chunking: ChunkingConfig
    created_at: str
    id_exceptions: list[dict] = field(default_factory=list)
    skipped_files: int = 0
    schema_version: int = 1

    def is_resolvable(self, doc_id: str, chunk_index: int) -> bool:
        count = self.chunk_count_by_doc.get(doc_id)
        return count is not None and 0 <= chunk_index < count

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "corpus_name": self.corpus_name,
            "created_at": self.created_at,
            "chunking": self.chunking.to_dict(),
            "documents": self.documents,
            "chunk_count_by_doc": dict(sorted(self.chunk_count_by_doc.items())),
            "id_exceptions": self.id_exceptions,
            "skipped_files": self.skipped_files,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        return cls(
            corpus_name=d["corpus_name"],
            documents=d["documents"],
            chunk_count_by_doc=d["chunk_count_by_doc"],
            chunking=ChunkingConfig.from_dict(d["chunking"]),
            created_at=d["created_at"],
            id_exceptions=d.get("id_exceptions", []),
            skipped_files=d.get("skipped_files", 0),
            schema_version=d.get("schema_version", 1),
        )


class ChunkStore:
    """In-memory chunk lookup keyed by (doc_id, chunk_index)."""

    def __init__(self, chunks: list[Chunk]):
        self._by_key: dict[tuple[str, int], Chunk] = {
            (c.doc_id, c.chunk_index): c for c in chunks
        }
        self.chunks = list(chunks)

    def __len__(self) -> int:
        return len(self.chunks)

    def get(self, doc_id: str, chunk_index: int) -> Chunk | None:
        return self._by_key.get((doc_id, chunk_index))

    def get_text(self, doc_id: str, chunk_index: int) -> str | None:
        chunk = self.get(doc_id, chunk_index)
        return chunk.text if chunk else None


@dataclass
class LoadResult:
    manifest: CorpusManifest
    documents: list[Document]
    chunks: list[Chunk]


def _window_spans(start: int, end: int, cfg: ChunkingConfig) -> list[tuple[int, int]]:
    """Fixed windows of target size stepping by target - overlap."""
    spans = []
    pos = start
    while True:
        stop = min(pos + cfg.target_chunk_chars, end)
        spans.append((pos, stop))
        if stop == end:
            return spans
        pos = stop - cfg.overlap_chars


def _paragraph_spans(text: str) -> list[tuple[int, int]]:
    """Partition [0, len) at paragraph starts. Blank-line separators attach
    to the preceding paragraph so the spans tile the text exactly."""
    starts = [0]
    for m in _PARA_BREAK_RE.finditer(text):
        if m.start() > 0 and m.end() < len(text):
            starts.append(m.end())
    return [(s, e) for s, e in zip(starts, starts[1:] + [len(text)])]


def chunk_document(doc: Document, cfg: ChunkingConfig) -> list[Chunk]:
    """Deterministically tile the document into chunks.

    fixed-window: windows of target_chunk_chars, consecutive windows
    overlapping by overlap_chars.

    paragraph-first: whole paragraphs are packed greedily; a chunk closes
    once it reaches target_chunk_chars, so the last paragraph packed may
    push it past the target. Single paragraphs longer than the target are
    split with fixed windows (the only place overlap appears in this mode).
    """
    text = doc.canonical_text
    if not text:
        raise ValueError("canonical_text must be non-empty")

    if cfg.split_strategy == "fixed-window":
        spans = _window_spans(0, len(text), cfg)
    else:
        atoms: list[tuple[int, int]] = []
        for ps, pe in _paragraph_spans(text):
            if pe - ps > cfg.target_chunk_chars:
                atoms.extend(_window_spans(ps, pe, cfg))
            else:
                atoms.append((ps, pe))
        spans = []
        cur_start, cur_end = atoms[0]
        for s, e in atoms[1:]:
            # close on reaching the target, or when atoms are not
            # contiguous (overlapping window atoms are emitted as-is)
            if cur_end - cur_start >= cfg.target_chunk_chars or s != cur_end:
                spans.append((cur_start, cur_end))
                cur_start, cur_end = s, e
            else:
                cur_end = e
        spans.append((cur_start, cur_end))

    return [
        Chunk(doc_id=doc.doc_id, chunk_index=i, text=text[s:e], char_span=(s, e))
        for i, (s, e) in enumerate(spans)
    ]


def _extract_title(canonical_text: str, fallback: str) -> str:
    for line in canonical_text.split("\n"):
        stripped = line.lstrip("#").strip()
        if stripped:
            return stripped[:TITLE_CHARS]
    return fallback


def _snippet(canonical_text: str) -> str:
    return " ".join(canonical_text[:SNIPPET_CHARS].split())


def load_corpus(corpus_dir: Path | str, cfg: ChunkingConfig | None = None) -> LoadResult:
    """Load every .txt/.md file under ``corpus_dir`` and chunk it.

    Deterministic: files are processed in sorted relative-path order, so
    the same directory and config always produce identical doc ids, chunks,
    and manifest content (created_at aside). Unreadable or
    empty-after-normalization files are skipped with a warning and counted.
    On a 6-hex doc_id collision the later document's id is extended to
    8 hex chars and the exception is recorded in the manifest.
    """
    corpus_dir = Path(corpus_dir)
    cfg = cfg or ChunkingConfig()
    if not corpus_dir.is_dir():
        raise EmptyCorpus(f"not a directory: {corpus_dir}")

    paths = sorted(
        (p for p in corpus_dir.rglob("*") if p.is_file() and p.suffix.lower() in TEXT_SUFFIXES),
        key=lambda p: p.relative_to(corpus_dir).as_posix(),
    )

    documents: list[Document] = []
    chunks: list[Chunk] = []
    full_hash_seen: dict[str, str] = {}  # full digest -> source path
    id_taken: dict[str, str] = {}  # assigned doc_id -> full digest
    id_exceptions: list[dict] = []
    skipped = 0

    for path in paths:
        rel = path.relative_to(corpus_dir).as_posix()
        try:
            raw = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            logger.warning("skipping unreadable file %s: %s", rel, exc)
            skipped += 1
            continue
        canonical = normalize_text(raw)
        if not canonical.strip():
            logger.warning("skipping empty-after-normalization file %s", rel)
            skipped += 1
            continue

        digest = content_hash(canonical)
        if digest in full_hash_seen:
            logger.warning(
                "skipping %s: identical content to %s", rel, full_hash_seen[digest]
            )
            skipped += 1
            continue
        full_hash_seen[digest] = rel

        doc_id = digest[:6]
        if doc_id in id_taken and id_taken[doc_id] != digest:
            extended = digest[:8]
            if extended in id_taken:
                raise DuplicateDocId(f"doc id collision beyond 8 hex chars: {rel}")
            id_exceptions.append(
                {"doc_id": extended, "collides_with": doc_id, "source_path": rel}
            )
            doc_id = extended
        id_taken[doc_id] = digest

        doc = Document(
            doc_id=doc_id,
            source_path=rel,
            title=_extract_title(canonical, path.stem),
            canonical_text=canonical,
            byte_length=len(canonical.encode("utf-8")),
        )
        documents.append(doc)
        chunks.extend(chunk_document(doc, cfg))

    if not documents:
        raise EmptyCorpus(f"no readable .txt/.md documents in {corpus_dir}")

    documents.sort(key=lambda d: d.doc_id)
    chunks.sort(key=lambda c: (c.doc_id, c.chunk_index))

    counts: dict[str, int] = {}
    for c in chunks:
        counts[c.doc_id] = counts.get(c.doc_id, 0) + 1

    manifest = CorpusManifest(
        corpus_name=corpus_dir.name,
        documents=[
            {"doc_id": d.doc_id, "title": d.title, "snippet": _snippet(d.canonical_text)}
            for d in documents
        ],
        chunk_count_by_doc=counts,
        chunking=cfg,
        created_at=datetime.now(timezone.utc).isoformat(),
        id_exceptions=id_exceptions,
        skipped_files=skipped,
    )
    return LoadResult(manifest=manifest, documents=documents, chunks=chunks)


# -- run-directory artifacts --------------------------------------------

def write_manifest(manifest: CorpusManifest, path: Path | str) -> None:
    Path(path).write_text(
        json.dumps(manifest.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def read_manifest(path: Path | str) -> CorpusManifest:
    return CorpusManifest.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_chunks(chunks: list[Chunk], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(
                json.dumps(
                    {
                        "doc_id": c.doc_id,
                        "chunk_index": c.chunk_index,
                        "text": c.text,
                        "char_span": list(c.char_span),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_chunks(path: Path | str) -> list[Chunk]:
    chunks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            chunks.append(
                Chunk(
                    doc_id=d["doc_id"],
                    chunk_index=d["chunk_index"],
                    text=d["text"],
                    char_span=tuple(d["char_span"]),
                )
            )
    return chunks
