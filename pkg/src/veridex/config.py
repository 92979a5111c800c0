"""Run configuration with flags > env (VERIDEX_*) > TOML file > defaults."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import ModelConfig
from .index import DEFAULT_K, EmbedderEndpoint
from .ingest import ChunkingConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_PREFIX = "VERIDEX_"

# flat setting name -> (toml table, toml key, type)
_SETTINGS: dict[str, tuple[str, str, type]] = {
    "endpoint": ("model", "endpoint", str),
    "model": ("model", "name", str),
    "temperature": ("model", "temperature", float),
    "report_temperature": ("model", "report_temperature", float),
    "max_output_tokens": ("model", "max_output_tokens", int),
    "context_window_tokens": ("model", "context_window_tokens", int),
    "embedder_url": ("embedder", "url", str),
    "embedder_model": ("embedder", "model", str),
    "k": ("retrieval", "k", int),
    "min_score": ("retrieval", "min_score", float),
    "judge_min_relevance": ("judge", "min_relevance", int),
    "judge_min_coverage": ("judge", "min_coverage", int),
    "max_search_calls": ("budget", "max_search_calls", int),
    "max_model_turns": ("budget", "max_model_turns", int),
    "target_chunk_chars": ("chunking", "target_chunk_chars", int),
    "overlap_chars": ("chunking", "overlap_chars", int),
    "split_strategy": ("chunking", "split_strategy", str),
}

DEFAULTS: dict = {
    "endpoint": "http://127.0.0.1:1234/v1/chat/completions",
    "model": "local-model",
    "temperature": 0.2,  # plan/judge; structure parsing favors determinism
    "report_temperature": 0.7,  # report prose
    "max_output_tokens": 2048,
    "context_window_tokens": 16384,
    "embedder_url": "http://127.0.0.1:1234/v1/embeddings",
    "embedder_model": "local-embedder",
    "k": DEFAULT_K,
    "min_score": None,
    "judge_min_relevance": 3,
    "judge_min_coverage": 3,
    "max_search_calls": 12,
    "max_model_turns": 6,
    "target_chunk_chars": 4096,
    "overlap_chars": 256,
    "split_strategy": "paragraph-first",
}


@dataclass(frozen=True)
class ThreadBudget:
    max_search_calls: int = 12
    max_model_turns: int = 6


@dataclass
class RunConfig:
    run_dir: Path
    model: ModelConfig
    embedder: EmbedderEndpoint
    k: int = DEFAULT_K
    min_score: float | None = None
    judge_min_relevance: int = 3
    judge_min_coverage: int = 3
    budget: ThreadBudget = field(default_factory=ThreadBudget)
    report_temperature: float = 0.7
    stages_through: str = "synthesis"

    def snapshot(self) -> dict:
        """Config as recorded in run.json for reproducibility."""
        return {
            "model_name": self.model.model_name,
            "endpoint_url": self.model.endpoint_url,
            "temperature": self.model.temperature,
            "report_temperature": self.report_temperature,
            "max_output_tokens": self.model.max_output_tokens,
            "context_window_tokens": self.model.context_window_tokens,
            "embedder_url": self.embedder.url,
            "embedder_model": self.embedder.model,
            "k": self.k,
            "min_score": self.min_score,
            "judge_min_relevance": self.judge_min_relevance,
            "judge_min_coverage": self.judge_min_coverage,
            "max_search_calls": self.budget.max_search_calls,
            "max_model_turns": self.budget.max_model_turns,
            "stages_through": self.stages_through,
        }


def _coerce(value: str, typ: type):
    if typ is float:
        return float(value)
    if typ is int:
        return int(value)
    return value


def resolve_settings(
    flags: dict | None = None,
    env: dict | None = None,
    config_path: Path | str | None = None,
) -> dict:
    """Merge settings by precedence: flags > env > TOML file > defaults.

    ``flags`` entries that are None are treated as unset.
    """
    env = os.environ if env is None else env
    settings = dict(DEFAULTS)

    if config_path is not None:
        with open(config_path, "rb") as fh:
            doc = tomllib.load(fh)
        for name, (table, key, _typ) in _SETTINGS.items():
            if table in doc and key in doc[table]:
                settings[name] = doc[table][key]

    for name, (_table, _key, typ) in _SETTINGS.items():
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            settings[name] = _coerce(env[env_key], typ)

    for name, value in (flags or {}).items():
        if value is not None:
            if name not in DEFAULTS:
                raise ValueError(f"unknown setting {name!r}")
            settings[name] = value

    return settings


def build_run_config(run_dir: Path | str, settings: dict) -> RunConfig:
    return RunConfig(
        run_dir=Path(run_dir),
        model=ModelConfig(
            model_name=settings["model"],
            endpoint_url=settings["endpoint"],
            temperature=settings["temperature"],
            max_output_tokens=settings["max_output_tokens"],
            context_window_tokens=settings["context_window_tokens"],
        ),
        embedder=EmbedderEndpoint(
            url=settings["embedder_url"], model=settings["embedder_model"]
        ),
        k=settings["k"],
        min_score=settings["min_score"],
        judge_min_relevance=settings["judge_min_relevance"],
        judge_min_coverage=settings["judge_min_coverage"],
        budget=ThreadBudget(
            max_search_calls=settings["max_search_calls"],
            max_model_turns=settings["max_model_turns"],
        ),
        report_temperature=settings["report_temperature"],
        stages_through=settings.get("stages_through", "synthesis"),
    )


def build_chunking_config(settings: dict) -> ChunkingConfig:
    return ChunkingConfig(
        target_chunk_chars=settings["target_chunk_chars"],
        overlap_chars=settings["overlap_chars"],
        split_strategy=settings["split_strategy"],
    )
