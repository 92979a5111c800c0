"""Uniform client to a local chat-completion endpoint.

Owns prompting mechanics, token budgeting, retries, and verbatim logging:
every endpoint call (including failed and retried ones) is persisted as
one Exchange before control returns to the caller, so a run's exchange
log is a complete transcript of what the model was shown and said.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import requests

from .errors import ContextOverflow, EmptyResponse, EndpointUnavailable, SchemaViolation
from .schemas import validate_payload

STAGES = ("synopsis", "plan", "thread", "judge", "synthesis")

# retries after the first attempt, with exponential backoff
CHAT_MAX_RETRIES = 3


def estimate_tokens(text: str) -> int:
    """chars/4 heuristic, used when the endpoint reports no usage."""
    return max(1, len(text) // 4)


@dataclass(frozen=True)
class ModelConfig:
    model_name: str
    endpoint_url: str
    temperature: float = 0.2
    max_output_tokens: int = 2048
    context_window_tokens: int = 16384
    timeout_s: float = 600.0
    backoff_s: float = 1.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not self.context_window_tokens > self.max_output_tokens > 0:
            raise ValueError("need context_window_tokens > max_output_tokens > 0")


@dataclass
class Exchange:
    stage: str
    prompt: str
    response: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: int
    timestamp: str
    attempt: int = 1
    status: str = "ok"  # ok | error
    error: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "prompt": self.prompt,
            "response": self.response,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency_ms": self.latency_ms,
            "timestamp": self.timestamp,
            "attempt": self.attempt,
            "status": self.status,
            "error": self.error,
            "extra": self.extra,
        }


class AuditLog:
    """Append-only JSONL sink; a lock serializes concurrent writers."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.entries = 0

    def append(self, exchange: Exchange) -> None:
        line = json.dumps(exchange.to_dict(), ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
            self.entries += 1


@dataclass
class StructuredResponse:
    data: dict
    repair_count: int
    raw: str


def _extract_json(text: str) -> dict | None:
    text = text.strip()
    try:
        obj = json.loads(text)
        if isinstance(obj, dict):
            return obj
    except json.JSONDecodeError:
        pass
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        try:
            obj = json.loads(text[start : end + 1])
            if isinstance(obj, dict):
                return obj
        except json.JSONDecodeError:
            return None
    return None


class ChatGateway:
    """Shareable across concurrent thread executions; the audit log is the
    only mutable state and it serializes itself."""

    def __init__(self, cfg: ModelConfig, audit_log: AuditLog):
        self.cfg = cfg
        self.audit_log = audit_log

    def _log(self, stage: str, prompt: str, response: str, usage: dict, started: float,
             attempt: int, status: str = "ok", error: str | None = None, **extra) -> None:
        self.audit_log.append(
            Exchange(
                stage=stage,
                prompt=prompt,
                response=response,
                prompt_tokens=usage.get("prompt_tokens", estimate_tokens(prompt)),
                completion_tokens=usage.get("completion_tokens", estimate_tokens(response) if response else 0),
                latency_ms=int((time.monotonic() - started) * 1000),
                timestamp=datetime.now(timezone.utc).isoformat(),
                attempt=attempt,
                status=status,
                error=error,
                extra=dict(extra),
            )
        )

    def complete(self, prompt: str, stage: str, temperature: float | None = None) -> str:
        """One chat completion. Raises ContextOverflow before any endpoint
        call if the prompt cannot fit; the caller decides how to truncate."""
        if stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if estimate_tokens(prompt) + self.cfg.max_output_tokens > self.cfg.context_window_tokens:
            raise ContextOverflow(
                f"prompt estimate {estimate_tokens(prompt)} + max_output "
                f"{self.cfg.max_output_tokens} exceeds window {self.cfg.context_window_tokens}"
            )
        body = {
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature if temperature is None else temperature,
            "max_tokens": self.cfg.max_output_tokens,
        }

        last_error: Exception | None = None
        empty_retried = False
        attempt = 0
        while attempt <= CHAT_MAX_RETRIES:
            attempt += 1
            if attempt > 1:
                time.sleep(self.cfg.backoff_s * (2 ** (attempt - 2)))
            started = time.monotonic()
            try:
                resp = requests.post(self.cfg.endpoint_url, json=body, timeout=self.cfg.timeout_s)
                if resp.status_code >= 500:
                    raise requests.ConnectionError(f"HTTP {resp.status_code}")
                resp.raise_for_status()
                payload = resp.json()
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                self._log(stage, prompt, "", {}, started, attempt, status="error", error=str(exc))
                continue
            content = (payload["choices"][0]["message"].get("content") or "").strip()
            usage = payload.get("usage") or {}
            if not content:
                self._log(stage, prompt, "", usage, started, attempt, status="error", error="empty response")
                if empty_retried:
                    raise EmptyResponse(f"model returned empty output twice at stage {stage}")
                empty_retried = True
                continue
            self._log(stage, prompt, content, usage, started, attempt)
            return content
        raise EndpointUnavailable(
            f"chat endpoint {self.cfg.endpoint_url} unreachable after "
            f"{attempt} attempts: {last_error}"
        )

    def complete_structured(self, prompt: str, schema_id: str, stage: str,
                            temperature: float | None = None) -> StructuredResponse:
        """Completion parsed and validated against a named schema; one
        repair reprompt (appending the validation error), then hard failure."""
        raw = self.complete(prompt, stage, temperature=temperature)
        data = _extract_json(raw)
        errors = ["response is not a JSON object"] if data is None else validate_payload(schema_id, data)
        if not errors:
            return StructuredResponse(data=data, repair_count=0, raw=raw)

        repair_prompt = (
            prompt
            + "\n\nYour previous response was invalid:\n- "
            + "\n- ".join(errors)
            + "\nRespond again with ONLY a valid JSON object in the required format."
        )
        raw2 = self.complete(repair_prompt, stage, temperature=temperature)
        data2 = _extract_json(raw2)
        errors2 = ["response is not a JSON object"] if data2 is None else validate_payload(schema_id, data2)
        if not errors2:
            return StructuredResponse(data=data2, repair_count=1, raw=raw2)
        raise SchemaViolation(f"{schema_id} invalid after repair attempt: {'; '.join(errors2)}")
