"""Embedding client and exact cosine-similarity search over chunk vectors.

Vectors are L2-normalized at insert so cosine reduces to a dot product.
Search is exhaustive (no ANN): corpora here are hundreds of documents and
auditability beats speed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .errors import DimensionMismatch, EndpointUnavailable, StaleEmbedder, ZeroVector
from .ingest import Chunk, ChunkStore

DEFAULT_K = 8
BATCH_SIZE = 32


@dataclass(frozen=True)
class EmbedderEndpoint:
    """Local HTTP JSON embedding service: POST {model, input: [texts]} ->
    {data: [{embedding: [floats]}]}."""

    url: str
    model: str
    timeout_s: float = 120.0
    max_attempts: int = 3
    backoff_s: float = 1.0


class EmbeddingClient:
    def __init__(self, endpoint: EmbedderEndpoint):
        self.endpoint = endpoint
        self._dim: int | None = None

    @property
    def dim(self) -> int | None:
        return self._dim

    @property
    def embedder_id(self) -> str:
        """Model identifier plus dimension, pinned into persisted indexes."""
        if self._dim is None:
            raise ValueError("embedder dimension unknown before the first embed call")
        return f"{self.endpoint.model}@{self._dim}"

    def _post(self, texts: list[str]) -> list[list[float]]:
        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_attempts):
            if attempt:
                time.sleep(self.endpoint.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = requests.post(
                    self.endpoint.url,
                    json={"model": self.endpoint.model, "input": texts},
                    timeout=self.endpoint.timeout_s,
                )
                if resp.status_code >= 500:
                    last_error = EndpointUnavailable(f"HTTP {resp.status_code}")
                    continue
                resp.raise_for_status()
                return [row["embedding"] for row in resp.json()["data"]]
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
        raise EndpointUnavailable(
            f"embedder at {self.endpoint.url} unreachable after "
            f"{self.endpoint.max_attempts} attempts: {last_error}"
        )

    def embed(self, texts: list[str]) -> np.ndarray:
        """Embed a batch; returns an (n, dim) float64 array, rows L2-normalized."""
        if not texts:
            raise ValueError("texts must be non-empty")
        rows = self._post(texts)
        if len(rows) != len(texts):
            raise DimensionMismatch(
                f"endpoint returned {len(rows)} vectors for {len(texts)} inputs"
            )
        mat = np.asarray(rows, dtype=np.float64)
        if mat.ndim != 2:
            raise DimensionMismatch("ragged embedding response")
        if self._dim is None:
            self._dim = int(mat.shape[1])
        elif mat.shape[1] != self._dim:
            raise DimensionMismatch(
                f"endpoint dimension changed: {mat.shape[1]} != {self._dim}"
            )
        if not np.all(np.isfinite(mat)):
            raise ValueError("embedding contains non-finite values")
        norms = np.linalg.norm(mat, axis=1)
        if np.any(norms == 0.0):
            raise ZeroVector("embedding with zero norm")
        return mat / norms[:, None]


def embed_batch(texts: list[str], client: EmbeddingClient) -> np.ndarray:
    """One L2-normalized vector per input text."""
    return client.embed(texts)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors; symmetric, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class SearchHit:
    key: str
    score: float
    snippet: str


@dataclass
class VectorIndex:
    """Immutable after build; safe for concurrent readers."""

    keys: list[str]
    matrix: np.ndarray  # (n, dim), rows L2-normalized
    embedder_id: str

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.keys)

    def save(self, path: Path | str) -> None:
        """JSONL: one header line {dim, embedder_id, count}, then one
        {key, v} line per entry. Deterministic byte-for-byte."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {"dim": self.dim, "embedder_id": self.embedder_id, "count": len(self.keys)}
                )
                + "\n"
            )
            for key, row in zip(self.keys, self.matrix):
                fh.write(json.dumps({"key": key, "v": row.tolist()}) + "\n")

    @classmethod
    def load(cls, path: Path | str, expect_embedder_id: str | None = None) -> "VectorIndex":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            keys, rows = [], []
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                keys.append(d["key"])
                rows.append(d["v"])
        if expect_embedder_id is not None and header["embedder_id"] != expect_embedder_id:
            raise StaleEmbedder(
                f"index built with {header['embedder_id']!r}, expected {expect_embedder_id!r}"
            )
        if len(keys) != header["count"]:
            raise ValueError(f"index truncated: {len(keys)} entries, header says {header['count']}")
        return cls(keys=keys, matrix=np.asarray(rows, dtype=np.float64), embedder_id=header["embedder_id"])


def build_index(chunks: list[Chunk], client: EmbeddingClient) -> VectorIndex:
    """Embed every chunk (in batches) into one exact-search index."""
    if not chunks:
        raise ValueError("chunk set must be non-empty")
    keys = [c.key for c in chunks]
    parts = []
    for i in range(0, len(chunks), BATCH_SIZE):
        parts.append(client.embed([c.text for c in chunks[i : i + BATCH_SIZE]]))
    return VectorIndex(keys=keys, matrix=np.vstack(parts), embedder_id=client.embedder_id)


def search(
    index: VectorIndex,
    query: str,
    k: int,
    client: EmbeddingClient,
    chunk_store: ChunkStore,
) -> list[SearchHit]:
    """Exact top-k by cosine; descending score, ties broken by ascending key."""
    if k < 1:
        raise ValueError("k must be >= 1")
    qvec = client.embed([query])[0]
    if client.embedder_id != index.embedder_id:
        raise StaleEmbedder(
            f"query embedder {client.embedder_id!r} != index {index.embedder_id!r}"
        )
    scores = index.matrix @ qvec
    order = np.lexsort((np.asarray(index.keys), -scores))
    hits = []
    for i in order[: min(k, len(index.keys))]:
        key = index.keys[i]
        ref_doc, _, ref_idx = key.partition(":")
        snippet = chunk_store.get_text(ref_doc, int(ref_idx)) or ""
        hits.append(SearchHit(key=key, score=float(scores[i]), snippet=snippet))
    return hits
