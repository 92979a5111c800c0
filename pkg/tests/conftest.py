from __future__ import annotations

from pathlib import Path
from types import SimpleNamespace

import pytest

from veridex.config import RunConfig, ThreadBudget
from veridex.gateway import AuditLog, ChatGateway, ModelConfig
from veridex.index import EmbedderEndpoint, EmbeddingClient, build_index
from veridex.ingest import ChunkingConfig, ChunkStore, load_corpus, write_chunks, write_manifest

from mock_endpoints import MockInferenceServer

NEEDLE_TEXT = "The shell company recorded a loss of £1,650k in fiscal 2015."


@pytest.fixture()
def mock_server():
    server = MockInferenceServer().start()
    yield server
    server.stop()


def make_corpus(corpus_dir: Path, n_docs: int = 10, with_needle: bool = True) -> Path:
    """Deterministic fixture corpus; doc texts are distinct and stable."""
    corpus_dir.mkdir(parents=True, exist_ok=True)
    subjects = [
        "planning permission", "environmental assessment", "court filings",
        "annual accounts", "press coverage", "correspondence", "permits",
        "site surveys", "ownership records", "public consultations",
    ]
    for i in range(n_docs):
        subject = subjects[i % len(subjects)]
        paragraphs = [
            f"# Document {i}: {subject}\n",
            f"This report covers {subject} in case {i}. "
            f"It records filings, figures, and dates for matter {i}. " * 3,
            f"A second section details follow-up actions for {subject}, "
            f"including hearings and deadlines in case {i}. " * 3,
        ]
        (corpus_dir / f"doc_{i:02d}.txt").write_text("\n\n".join(paragraphs), encoding="utf-8")
    if with_needle:
        (corpus_dir / "needle.txt").write_text(NEEDLE_TEXT, encoding="utf-8")
    return corpus_dir


@pytest.fixture()
def corpus_dir(tmp_path):
    return make_corpus(tmp_path / "corpus")


def ingest_into(run_dir: Path, corpus: Path, cfg: ChunkingConfig | None = None):
    run_dir.mkdir(parents=True, exist_ok=True)
    result = load_corpus(corpus, cfg or ChunkingConfig())
    write_manifest(result.manifest, run_dir / "manifest.json")
    write_chunks(result.chunks, run_dir / "chunks.jsonl")
    return result


def make_embed_client(server: MockInferenceServer) -> EmbeddingClient:
    return EmbeddingClient(
        EmbedderEndpoint(url=server.embed_url, model="mock-embedder", backoff_s=0.01)
    )


def build_run_dir(tmp_path: Path, corpus: Path, server: MockInferenceServer,
                  subdir: str = "run", cfg: ChunkingConfig | None = None) -> SimpleNamespace:
    """Ingest + index a corpus into a fresh run directory."""
    run_dir = tmp_path / subdir
    result = ingest_into(run_dir, corpus, cfg)
    client = make_embed_client(server)
    index = build_index(result.chunks, client)
    index.save(run_dir / "index.jsonl")
    return SimpleNamespace(
        run_dir=run_dir,
        manifest=result.manifest,
        documents=result.documents,
        chunks=result.chunks,
        store=ChunkStore(result.chunks),
        index=index,
        client=client,
    )


def make_run_config(run_dir: Path, server: MockInferenceServer, **over) -> RunConfig:
    model = ModelConfig(
        model_name="mock-model",
        endpoint_url=server.chat_url,
        temperature=over.pop("temperature", 0.2),
        max_output_tokens=over.pop("max_output_tokens", 2048),
        context_window_tokens=over.pop("context_window_tokens", 65536),
        backoff_s=0.01,
    )
    embedder = EmbedderEndpoint(url=server.embed_url, model="mock-embedder", backoff_s=0.01)
    budget = over.pop("budget", ThreadBudget())
    return RunConfig(run_dir=run_dir, model=model, embedder=embedder, budget=budget, **over)


def make_gateway(server: MockInferenceServer, log_path: Path, **over) -> ChatGateway:
    cfg = ModelConfig(
        model_name="mock-model",
        endpoint_url=server.chat_url,
        backoff_s=0.01,
        context_window_tokens=over.pop("context_window_tokens", 65536),
        max_output_tokens=over.pop("max_output_tokens", 2048),
        **over,
    )
    return ChatGateway(cfg, AuditLog(log_path))
